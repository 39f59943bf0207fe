use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use symtune_core::corpus::{ingest_dir, list_midi_files, write_synth_corpus};
use symtune_core::features::{
    average_piano_roll, diversity, histogram_csv, piano_roll_csv, FeatureReport, ROLL_BEATS, ROLL_STEPS_PER_BEAT,
};
use symtune_core::grpo::{generate, vocab_from_metadata, PromptSource, RunDir, Trainer};
use symtune_core::midi::{parse_smf, write_smf};
use symtune_core::model::{load_checkpoint, pretrain, save_checkpoint, ModelParams};
use symtune_core::render::{crop_audio, render, render_cropped, write_wav};
use symtune_core::scorer::{compare_renderers, reward_of, RolloutInput};
use symtune_core::tokenizer::TokenDataset;
use symtune_core::util::atomic_write;
use symtune_core::{extract_features, AestheticScores, RendererChoice, Score, Vocab};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::lock::DirLock;

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    atomic_write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write(path, s.as_bytes())
}

fn require(what: &str, path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(what, path))
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Takes the lock on `dir` and records the resolved config there.
fn claim(dir: &Path, cfg: &PipelineConfig) -> Result<DirLock, CliError> {
    let lock = DirLock::acquire(dir)?;
    cfg.write_resolved(dir)?;
    Ok(lock)
}

/// Every MIDI file under `input` (or `input` itself), parsed, in path order.
fn read_scores(input: &Path) -> Result<Vec<(String, Score)>, CliError> {
    require("input", input)?;
    let files: Vec<PathBuf> = if input.is_dir() {
        list_midi_files(input)?.into_iter().map(|rel| input.join(rel)).collect()
    } else {
        vec![input.to_path_buf()]
    };
    files
        .into_iter()
        .map(|path| {
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            let score = parse_smf(&bytes).map_err(|e| CliError::new("midi", format!("{}: {e}", path.display())))?;
            let name = if input.is_dir() { path.strip_prefix(input).unwrap_or(&path) } else { path.file_name().map(Path::new).unwrap_or(&path) };
            Ok((name.to_string_lossy().replace('\\', "/"), score))
        })
        .collect()
}

fn load_model(path: &Path, vocab: &Vocab) -> Result<ModelParams<f32>, CliError> {
    require("checkpoint", path)?;
    let ckpt = load_checkpoint(path)?;
    if let Some(vc) = vocab_from_metadata(&ckpt.metadata) {
        if &vc != vocab.config() {
            return Err(CliError::config(format!(
                "{} was trained with a different vocabulary configuration",
                path.display()
            )));
        }
    }
    if ckpt.params.config.vocab_size != vocab.len() {
        return Err(CliError::config(format!(
            "{} has vocabulary size {}, configuration gives {}",
            path.display(),
            ckpt.params.config.vocab_size,
            vocab.len()
        )));
    }
    Ok(ckpt.params)
}

/// Prompt pool for dataset prompts, `None` for procedural ones.
fn prompt_pool(cfg: &PipelineConfig) -> Result<Option<TokenDataset>, CliError> {
    match cfg.grpo.prompt_source {
        PromptSource::Procedural => Ok(None),
        PromptSource::Dataset { .. } => {
            require("dataset", &cfg.paths.dataset)?;
            Ok(Some(TokenDataset::load(&cfg.paths.dataset)?.0))
        }
    }
}

pub fn synth_corpus(cfg: &PipelineConfig, n: usize) -> Result<(), CliError> {
    let dir = &cfg.paths.corpus_dir;
    let _lock = DirLock::acquire(dir)?;
    let files = write_synth_corpus(dir, n, cfg.seed)?;
    log::info!("wrote {} synthetic files to {}", files.len(), dir.display());
    Ok(())
}

pub fn ingest(cfg: &PipelineConfig) -> Result<(), CliError> {
    let vocab = cfg.vocab()?;
    require("corpus directory", &cfg.paths.corpus_dir)?;
    let out = parent_dir(&cfg.paths.dataset);
    let _lock = claim(&out, cfg)?;
    let (dataset, report) = ingest_dir(&cfg.paths.corpus_dir, &vocab)?;
    dataset.save(&cfg.paths.dataset, &vocab)?;
    write_json(&out.join("ingest_report.json"), &report)?;
    log::info!(
        "scanned {}, accepted {}, rejected {} -> {}",
        report.scanned,
        report.accepted,
        report.rejected,
        cfg.paths.dataset.display()
    );
    Ok(())
}

pub fn pretrain_cmd(cfg: &PipelineConfig) -> Result<(), CliError> {
    require("dataset", &cfg.paths.dataset)?;
    cfg.model.validate()?;
    let (dataset, vocab) = TokenDataset::load(&cfg.paths.dataset)?;
    if vocab.config() != &cfg.vocab {
        return Err(CliError::config("dataset vocabulary differs from the configured vocabulary"));
    }
    let out = parent_dir(&cfg.paths.checkpoint);
    let _lock = claim(&out, cfg)?;
    let outcome = pretrain(&dataset, &cfg.model, &cfg.pretrain)?;
    for e in &outcome.history {
        log::info!("epoch {} train {:.4} validation {:?}", e.epoch, e.train_loss, e.validation_loss);
    }
    let meta = json!({ "stage": "pretrain", "vocab": cfg.vocab, "pretrain": cfg.pretrain });
    save_checkpoint(&cfg.paths.checkpoint, &outcome.params, &meta)?;
    write_json(&out.join("pretrain_history.json"), &json!({ "history": outcome.history, "split": outcome.split }))?;
    Ok(())
}

pub fn tune(cfg: &PipelineConfig) -> Result<(), CliError> {
    let vocab = cfg.vocab()?;
    cfg.grpo.validate()?;
    cfg.renderer.validate()?;
    let base = load_model(&cfg.paths.checkpoint, &vocab)?;
    let pool = prompt_pool(cfg)?;
    let scorer = cfg.reward.build_scorer()?;
    let out = &cfg.paths.out_dir;
    let _lock = claim(out, cfg)?;
    let run = RunDir::new(out);
    let mut trainer = match run.load()? {
        Some((policy, reference, state, saved)) => {
            let comparable = |c: &symtune_core::grpo::GrpoConfig| symtune_core::grpo::GrpoConfig { iterations: 0, ..c.clone() };
            if comparable(&saved) != comparable(&cfg.grpo) {
                return Err(CliError::config(format!(
                    "{} holds a run with different settings; only iterations may change on resume",
                    out.display()
                )));
            }
            log::info!("resuming at iteration {}", state.next_iter);
            run.truncate_log(state.next_iter)?;
            Trainer::resume(policy, reference, state, cfg.grpo.clone(), &vocab, scorer.as_ref(), cfg.reward.clone(), cfg.renderer.clone(), pool.as_ref())?
        }
        None => Trainer::new(base, cfg.grpo.clone(), &vocab, scorer.as_ref(), cfg.reward.clone(), cfg.renderer.clone(), pool.as_ref())?,
    };
    trainer.run(Some(&run), |log, _| {
        log::info!(
            "iter {} reward {:.3} ± {:.3} kl {:.2e} loss {:.4} lr {:.2e}",
            log.iter,
            log.mean_reward,
            log.std_reward,
            log.mean_kl,
            log.loss,
            log.lr
        );
    })?;
    Ok(())
}

#[derive(Serialize)]
struct GenerationEntry {
    index: usize,
    seed: u64,
    file: String,
    prompt_tokens: usize,
    completion_tokens: usize,
    n_notes: usize,
}

/// Files are named by the sample's prompt seed.
pub fn generation_file_name(seed: u64) -> String {
    format!("sample_{seed:016x}.mid")
}

pub fn generate_cmd(cfg: &PipelineConfig, n: usize) -> Result<(), CliError> {
    let vocab = cfg.vocab()?;
    cfg.grpo.validate()?;
    let params = load_model(&cfg.paths.checkpoint, &vocab)?;
    let pool = prompt_pool(cfg)?;
    let out = &cfg.paths.out_dir;
    let _lock = claim(out, cfg)?;
    let gens = generate(
        &params,
        &vocab,
        n,
        &cfg.grpo.prompt_source,
        pool.as_ref(),
        cfg.grpo.max_new_tokens,
        cfg.grpo.temperature,
        cfg.seed,
    )?;
    let mut manifest = Vec::with_capacity(gens.len());
    for g in &gens {
        let file = generation_file_name(g.seed);
        write(&out.join(&file), &write_smf(&g.score))?;
        manifest.push(GenerationEntry {
            index: g.index,
            seed: g.seed,
            file,
            prompt_tokens: g.prompt.len(),
            completion_tokens: g.completion.len(),
            n_notes: g.score.notes.len(),
        });
    }
    write_json(&out.join("generations.json"), &manifest)?;
    log::info!("wrote {} samples to {}", manifest.len(), out.display());
    Ok(())
}

fn wav_name(file: &str) -> String {
    let stem = file.rsplit_once('.').map_or(file, |(s, _)| s);
    format!("{stem}.wav")
}

pub fn render_cmd(cfg: &PipelineConfig, input: &Path, crop: bool) -> Result<(), CliError> {
    cfg.renderer.validate()?;
    let scores = read_scores(input)?;
    let out = &cfg.paths.out_dir;
    let _lock = claim(out, cfg)?;
    for (file, score) in &scores {
        let mut clip = render(score, &cfg.renderer, cfg.sample_rate)?;
        if crop {
            clip = crop_audio(&clip, cfg.grpo.audio_crop_seconds);
        }
        write(&out.join(wav_name(file)), &write_wav(&clip))?;
    }
    log::info!("rendered {} files to {}", scores.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow {
    file: String,
    #[serde(flatten)]
    scores: AestheticScores,
    reward: f64,
}

pub fn score_cmd(cfg: &PipelineConfig, input: &Path) -> Result<(), CliError> {
    cfg.renderer.validate()?;
    let scorer = cfg.reward.build_scorer()?;
    let scores = read_scores(input)?;
    let out = &cfg.paths.out_dir;
    let _lock = claim(out, cfg)?;
    let mut rows = Vec::with_capacity(scores.len());
    for (file, score) in &scores {
        let audio = render_cropped(score, &cfg.renderer, cfg.sample_rate, cfg.grpo.audio_crop_seconds)?;
        let s = scorer.score(&RolloutInput { score, audio: &audio })?;
        rows.push(ScoreRow {
            file: file.clone(),
            scores: s,
            reward: reward_of(&s, &cfg.reward),
        });
    }
    let all: Vec<AestheticScores> = rows.iter().map(|r| r.scores).collect();
    write_json(
        &out.join("scores.json"),
        &json!({ "axis": cfg.reward.axis, "files": rows, "mean": AestheticScores::mean(&all) }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct FileFeatures {
    file: String,
    features: FeatureReport,
}

#[derive(Serialize)]
struct FeatureSummary {
    files: usize,
    mean_n_notes: f64,
    mean_polyphony_rate: f64,
    mean_empty_beat_rate: f64,
    mean_pitch_range: f64,
    mean_scale_consistency: f64,
    mean_velocity_range: f64,
}

fn summarize(reports: &[FeatureReport]) -> FeatureSummary {
    let n = reports.len().max(1) as f64;
    let avg = |f: fn(&FeatureReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    FeatureSummary {
        files: reports.len(),
        mean_n_notes: avg(|r| r.n_notes as f64),
        mean_polyphony_rate: avg(|r| r.polyphony_rate),
        mean_empty_beat_rate: avg(|r| r.empty_beat_rate),
        mean_pitch_range: avg(|r| r.pitch_range as f64),
        mean_scale_consistency: avg(|r| r.scale_consistency),
        mean_velocity_range: avg(|r| r.velocity_range as f64),
    }
}

/// Unique labels from directory names.
fn labels(inputs: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    inputs
        .iter()
        .map(|p| {
            let base = p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "set".into());
            let k = seen.entry(base.clone()).or_insert(0);
            *k += 1;
            if *k == 1 {
                base
            } else {
                format!("{base}_{k}")
            }
        })
        .collect()
}

pub fn analyze(cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<(), CliError> {
    let sets: Vec<Vec<(String, Score)>> = inputs.iter().map(|p| read_scores(p)).collect::<Result<_, _>>()?;
    let out = &cfg.paths.out_dir;
    let _lock = claim(out, cfg)?;
    let mut doc = Vec::new();
    for ((label, input), scores) in labels(inputs).into_iter().zip(inputs).zip(sets) {
        let files: Vec<FileFeatures> = scores
            .iter()
            .map(|(file, s)| FileFeatures {
                file: file.clone(),
                features: extract_features(s),
            })
            .collect();
        let reports: Vec<FeatureReport> = files.iter().map(|f| f.features.clone()).collect();
        write(&out.join(format!("histograms_{label}.csv")), histogram_csv(&reports).as_bytes())?;
        doc.push(json!({
            "label": label,
            "input": input.to_string_lossy(),
            "summary": summarize(&reports),
            "files": files,
        }));
    }
    write_json(&out.join("features.json"), &json!({ "sets": doc }))?;
    Ok(())
}

pub fn diversity_cmd(cfg: &PipelineConfig, input: &Path) -> Result<(), CliError> {
    let scores: Vec<Score> = read_scores(input)?.into_iter().map(|(_, s)| s).collect();
    let out = &cfg.paths.out_dir;
    let _lock = claim(out, cfg)?;
    let d = diversity(&scores, ROLL_BEATS, ROLL_STEPS_PER_BEAT)?;
    let roll = average_piano_roll(&scores, ROLL_BEATS, ROLL_STEPS_PER_BEAT)?;
    write(&out.join("piano_roll.csv"), piano_roll_csv(&roll).as_bytes())?;
    write_json(
        &out.join("diversity.json"),
        &json!({
            "samples": scores.len(),
            "beats": ROLL_BEATS,
            "steps_per_beat": ROLL_STEPS_PER_BEAT,
            "diversity": d,
        }),
    )?;
    log::info!("diversity over {} samples: {d:.6}", scores.len());
    Ok(())
}

pub fn compare_renderers_cmd(cfg: &PipelineConfig, input: &Path, soundfonts: &[PathBuf]) -> Result<(), CliError> {
    let mut renderers = vec![RendererChoice::Builtin];
    if !soundfonts.is_empty() {
        let program = match &cfg.renderer {
            RendererChoice::External { program, .. } => program.clone(),
            RendererChoice::Builtin => {
                return Err(CliError::config("comparing soundfonts needs --renderer-program and --soundfont"))
            }
        };
        for sf in soundfonts {
            let choice = RendererChoice::External { program: program.clone(), soundfont: sf.clone() };
            choice.validate()?;
            renderers.push(choice);
        }
    } else if cfg.renderer != RendererChoice::Builtin {
        cfg.renderer.validate()?;
        renderers.push(cfg.renderer.clone());
    }
    let scorer = cfg.reward.build_scorer()?;
    let samples: Vec<Score> = read_scores(input)?.into_iter().map(|(_, s)| s).collect();
    let out = &cfg.paths.out_dir;
    let _lock = claim(out, cfg)?;
    let table = compare_renderers(&samples, &renderers, scorer.as_ref(), cfg.sample_rate, cfg.grpo.audio_crop_seconds)?;
    write(&out.join("renderers.csv"), table.to_csv().as_bytes())?;
    write_json(&out.join("renderers.json"), &table)?;
    Ok(())
}
