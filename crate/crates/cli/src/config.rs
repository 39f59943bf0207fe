//! Layered pipeline configuration: built-in defaults, then a JSON config
//! file, then the scorer URL environment variable, then command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use symtune_core::grpo::GrpoConfig;
use symtune_core::model::{ModelConfig, PretrainConfig};
use symtune_core::render::DEFAULT_SAMPLE_RATE;
use symtune_core::tokenizer::VocabConfig;
use symtune_core::{Axis, RendererChoice, RewardSpec, Vocab};

use crate::error::CliError;

pub const SCORER_URL_ENV: &str = "SYMTUNE_SCORER_URL";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    /// Token dataset file; its vocabulary sidecar sits next to it.
    pub dataset: PathBuf,
    /// Pretrained model checkpoint.
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_dir: "corpus".into(),
            dataset: "work/dataset.bin".into(),
            checkpoint: "work/base.ckpt".into(),
            out_dir: "work/out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub vocab: VocabConfig,
    /// `vocab_size` always follows the vocabulary.
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub grpo: GrpoConfig,
    pub reward: RewardSpec,
    pub renderer: RendererChoice,
    pub sample_rate: u32,
    /// Copied into every stochastic component's own seed field.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let vocab = VocabConfig::default();
        let size = Vocab::build(vocab.clone()).map(|v| v.len()).unwrap_or(0);
        PipelineConfig {
            paths: Paths::default(),
            vocab,
            model: ModelConfig::desk(size),
            pretrain: PretrainConfig::default(),
            grpo: GrpoConfig::default(),
            reward: RewardSpec::default(),
            renderer: RendererChoice::default(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Builds the vocabulary and pushes the shared seed, sample rate and
    /// vocabulary size into the component configs.
    fn propagate(&mut self) -> Result<(), CliError> {
        let vocab = Vocab::build(self.vocab.clone()).map_err(|e| CliError::config(e.to_string()))?;
        self.model.vocab_size = vocab.len();
        self.model.seed = self.seed;
        self.pretrain.seed = self.seed;
        self.grpo.seed = self.seed;
        self.grpo.sample_rate = self.sample_rate;
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocab, CliError> {
        Vocab::build(self.vocab.clone()).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        symtune_core::util::atomic_write(&path, self.to_json().as_bytes()).map_err(|e| CliError::io(&path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerFlag {
    Proxy,
    Remote,
}

/// Flags mirroring [`PipelineConfig`] fields. Unset flags leave the
/// lower layers alone.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// JSON config file; may set any subset of fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub corpus_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub sample_rate: Option<u32>,

    #[arg(long, global = true)]
    pub n_layers: Option<usize>,
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub n_heads: Option<usize>,
    #[arg(long, global = true)]
    pub d_ff: Option<usize>,
    #[arg(long, global = true)]
    pub max_seq_len: Option<usize>,

    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub crop_len: Option<usize>,
    #[arg(long, global = true)]
    pub crops_per_file: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub holdout_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub validation_fraction: Option<f64>,

    #[arg(long, global = true)]
    pub prompts_per_iter: Option<usize>,
    #[arg(long, global = true)]
    pub completions_per_prompt: Option<usize>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    #[arg(long, global = true)]
    pub lr_start: Option<f64>,
    #[arg(long, global = true)]
    pub max_new_tokens: Option<usize>,
    #[arg(long, global = true)]
    pub audio_crop_seconds: Option<f64>,
    #[arg(long, global = true)]
    pub advantage_epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub grad_clip: Option<f64>,
    #[arg(long, global = true)]
    pub checkpoint_every: Option<usize>,
    /// Use dataset prefixes of this many tokens as prompts.
    #[arg(long, global = true)]
    pub prompt_len: Option<usize>,

    /// Reward axis: CE, CU, PC or PQ.
    #[arg(long, global = true)]
    pub axis: Option<Axis>,
    #[arg(long, global = true, value_enum)]
    pub scorer: Option<ScorerFlag>,
    #[arg(long, global = true)]
    pub scorer_url: Option<String>,
    #[arg(long, global = true)]
    pub scorer_timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    pub scorer_retries: Option<usize>,
    #[arg(long, global = true)]
    pub scorer_max_in_flight: Option<usize>,

    /// External renderer executable; needs `--soundfont`.
    #[arg(long, global = true)]
    pub renderer_program: Option<PathBuf>,
    #[arg(long, global = true)]
    pub soundfont: Option<PathBuf>,
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

impl ConfigFlags {
    /// `(json pointer, value)` pairs for every flag that was given.
    pub fn overrides(&self) -> Result<Vec<(&'static str, Value)>, CliError> {
        let mut out: Vec<(&'static str, Value)> = Vec::new();
        macro_rules! set {
            ($field:ident => $ptr:literal) => {
                if let Some(v) = &self.$field {
                    out.push(($ptr, json!(v)));
                }
            };
        }
        for (field, ptr) in [
            (&self.corpus_dir, "/paths/corpus_dir"),
            (&self.dataset, "/paths/dataset"),
            (&self.checkpoint, "/paths/checkpoint"),
            (&self.out_dir, "/paths/out_dir"),
        ] {
            if let Some(p) = field {
                out.push((ptr, path_value(p)));
            }
        }
        set!(seed => "/seed");
        set!(sample_rate => "/sample_rate");
        set!(n_layers => "/model/n_layers");
        set!(d_model => "/model/d_model");
        set!(n_heads => "/model/n_heads");
        set!(d_ff => "/model/d_ff");
        set!(max_seq_len => "/model/max_seq_len");
        set!(epochs => "/pretrain/epochs");
        set!(batch_size => "/pretrain/batch_size");
        set!(crop_len => "/pretrain/crop_len");
        set!(crops_per_file => "/pretrain/crops_per_file");
        set!(learning_rate => "/pretrain/learning_rate");
        set!(holdout_fraction => "/pretrain/holdout_fraction");
        set!(validation_fraction => "/pretrain/validation_fraction");
        set!(prompts_per_iter => "/grpo/prompts_per_iter");
        set!(completions_per_prompt => "/grpo/completions_per_prompt");
        set!(temperature => "/grpo/temperature");
        set!(beta => "/grpo/beta");
        set!(iterations => "/grpo/iterations");
        set!(lr_start => "/grpo/lr_start");
        set!(max_new_tokens => "/grpo/max_new_tokens");
        set!(audio_crop_seconds => "/grpo/audio_crop_seconds");
        set!(advantage_epsilon => "/grpo/advantage_epsilon");
        set!(grad_clip => "/grpo/grad_clip");
        set!(checkpoint_every => "/grpo/checkpoint_every");
        if let Some(n) = self.prompt_len {
            out.push(("/grpo/prompt_source", json!({ "kind": "dataset", "prompt_len": n })));
        }
        if let Some(a) = self.axis {
            out.push(("/reward/axis", serde_json::to_value(a).expect("axis serializes")));
        }
        match self.scorer {
            Some(ScorerFlag::Proxy) => out.push(("/reward/scorer", json!({ "kind": "proxy" }))),
            Some(ScorerFlag::Remote) => out.push(("/reward/scorer/kind", json!("remote"))),
            None => {}
        }
        set!(scorer_url => "/reward/scorer/base_url");
        set!(scorer_timeout_ms => "/reward/scorer/timeout_ms");
        set!(scorer_retries => "/reward/scorer/max_retries");
        set!(scorer_max_in_flight => "/reward/scorer/max_in_flight");
        match (&self.renderer_program, &self.soundfont) {
            (Some(program), Some(soundfont)) => out.push((
                "/renderer",
                json!({ "kind": "external", "program": path_value(program), "soundfont": path_value(soundfont) }),
            )),
            (None, None) => {}
            _ => return Err(CliError::config("--renderer-program and --soundfont must be given together")),
        }
        Ok(out)
    }

    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let env_url = std::env::var(SCORER_URL_ENV).ok().filter(|s| !s.is_empty());
        resolve(self.config.as_deref(), env_url.as_deref(), &self.overrides()?)
    }
}

/// Recursively merges `top` into `base`; non-object values replace.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_pointer(root: &mut Value, pointer: &str, value: Value) {
    let mut at = root;
    let keys: Vec<&str> = pointer.trim_start_matches('/').split('/').collect();
    for key in &keys[..keys.len() - 1] {
        if !at.is_object() {
            *at = Value::Object(Map::new());
        }
        at = at.as_object_mut().expect("object").entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    if !at.is_object() {
        *at = Value::Object(Map::new());
    }
    at.as_object_mut().expect("object").insert(keys[keys.len() - 1].to_string(), value);
}

/// Defaults < config file < `SYMTUNE_SCORER_URL` < flags.
pub fn resolve(file: Option<&Path>, env_url: Option<&str>, overrides: &[(&str, Value)]) -> Result<PipelineConfig, CliError> {
    let mut v = serde_json::to_value(PipelineConfig::default()).expect("defaults serialize");
    if let Some(path) = file {
        if !path.exists() {
            return Err(CliError::missing("config file", path));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let layer: Value =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if !layer.is_object() {
            return Err(CliError::config(format!("{}: expected a JSON object", path.display())));
        }
        merge(&mut v, layer);
    }
    if let Some(url) = env_url {
        set_pointer(&mut v, "/reward/scorer/base_url", json!(url));
    }
    for (pointer, value) in overrides {
        set_pointer(&mut v, pointer, value.clone());
    }
    // Remote settings only apply to the remote scorer.
    if v.pointer("/reward/scorer/kind") != Some(&json!("remote")) {
        let kind = v.pointer("/reward/scorer/kind").cloned().unwrap_or(json!("proxy"));
        set_pointer(&mut v, "/reward/scorer", json!({ "kind": kind }));
    }
    let mut cfg: PipelineConfig = serde_json::from_value(v).map_err(|e| CliError::config(e.to_string()))?;
    cfg.propagate()?;
    Ok(cfg)
}
