use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    dataset_prompt, grpo_loss, lr_at, procedural_prompt, sample_std, GroupBatch, GrpoConfig, GrpoError, PromptSource, Rollout,
};
use crate::midi::Score;
use crate::model::{
    clip_grad_norm, load_checkpoint, log_probs, sample_with_log_probs, save_checkpoint, Adam, AdamState, ModelParams,
};
use crate::render::{render_cropped, RendererChoice};
use crate::scorer::{reward_of, AestheticScores, RewardSpec, RolloutInput, Scorer};
use crate::tokenizer::{decode, TokenDataset, TokenSequence, Vocab};
use crate::util::{atomic_write, mix_seed};

const PROMPT_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

/// One line of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_kl: f64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
    pub n_rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub next_iter: usize,
    pub adam: AdamState,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: ModelParams<f32>,
    pub history: Vec<IterationLog>,
}

pub struct Trainer<'a> {
    pub config: GrpoConfig,
    pub policy: ModelParams<f32>,
    pub reference: ModelParams<f32>,
    pub next_iter: usize,
    /// Keep rendered audio on the returned rollouts.
    pub keep_audio: bool,
    adam: Adam,
    vocab: &'a Vocab,
    scorer: &'a dyn Scorer,
    reward: RewardSpec,
    renderer: RendererChoice,
    prompt_pool: Option<&'a TokenDataset>,
}

fn prompt_for(
    source: &PromptSource,
    pool: Option<&TokenDataset>,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> Result<TokenSequence, GrpoError> {
    match source {
        PromptSource::Procedural => Ok(procedural_prompt(rng, vocab)),
        PromptSource::Dataset { prompt_len } => {
            let pool = pool.ok_or_else(|| GrpoError::Prompt("dataset prompts need a token dataset".into()))?;
            dataset_prompt(pool, rng, *prompt_len)
        }
    }
}

impl<'a> Trainer<'a> {
    /// Policy and reference both start from `base`.
    pub fn new(
        base: ModelParams<f32>,
        config: GrpoConfig,
        vocab: &'a Vocab,
        scorer: &'a dyn Scorer,
        reward: RewardSpec,
        renderer: RendererChoice,
        prompt_pool: Option<&'a TokenDataset>,
    ) -> Result<Self, GrpoError> {
        let state = TrainerState {
            next_iter: 0,
            adam: Adam::new(base.data.len()).state,
        };
        Self::resume(base.clone(), base, state, config, vocab, scorer, reward, renderer, prompt_pool)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn resume(
        policy: ModelParams<f32>,
        reference: ModelParams<f32>,
        state: TrainerState,
        config: GrpoConfig,
        vocab: &'a Vocab,
        scorer: &'a dyn Scorer,
        reward: RewardSpec,
        renderer: RendererChoice,
        prompt_pool: Option<&'a TokenDataset>,
    ) -> Result<Self, GrpoError> {
        config.validate()?;
        renderer.validate().map_err(|e| GrpoError::InvalidConfig(e.to_string()))?;
        if policy.config != reference.config {
            return Err(GrpoError::InvalidConfig("policy and reference shapes differ".into()));
        }
        if policy.config.vocab_size != vocab.len() {
            return Err(GrpoError::InvalidConfig(format!(
                "model vocabulary {} does not match tokenizer vocabulary {}",
                policy.config.vocab_size,
                vocab.len()
            )));
        }
        if state.adam.m.len() != policy.data.len() || state.adam.v.len() != policy.data.len() {
            return Err(GrpoError::InvalidConfig("optimizer state does not match the model".into()));
        }
        if matches!(config.prompt_source, PromptSource::Dataset { .. }) && prompt_pool.is_none() {
            return Err(GrpoError::Prompt("dataset prompts need a token dataset".into()));
        }
        Ok(Trainer {
            config,
            policy,
            reference,
            next_iter: state.next_iter,
            keep_audio: false,
            adam: Adam::with_state(state.adam),
            vocab,
            scorer,
            reward,
            renderer,
            prompt_pool,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            next_iter: self.next_iter,
            adam: self.adam.state.clone(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.next_iter >= self.config.iterations
    }

    /// Samples, decodes, renders and scores one iteration's rollouts with
    /// the current policy. Randomness is derived from `(seed, iter, id)`, so
    /// the result does not depend on scheduling.
    pub fn collect_rollouts(&self, iter: usize) -> Result<GroupBatch, GrpoError> {
        let cfg = &self.config;
        let g = cfg.completions_per_prompt;
        let prompts: Vec<Vec<u32>> = (0..cfg.prompts_per_iter)
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, iter as u64, p as u64, PROMPT_STREAM]));
                prompt_for(&cfg.prompt_source, self.prompt_pool, self.vocab, &mut rng).map(TokenSequence::into_ids)
            })
            .collect::<Result<_, _>>()?;

        let sampled: Vec<Result<Rollout, GrpoError>> = (0..cfg.rollouts_per_iter())
            .into_par_iter()
            .map(|id| {
                let group = id / g;
                let prompt = &prompts[group];
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, iter as u64, id as u64, SAMPLE_STREAM]));
                let (completion, old) =
                    sample_with_log_probs(&self.policy, prompt, cfg.max_new_tokens, cfg.temperature, &mut rng)?;
                let completion = completion.into_ids();
                let mut seq = prompt.clone();
                seq.extend_from_slice(&completion);
                let reference = if completion.is_empty() {
                    Vec::new()
                } else {
                    log_probs(&self.reference, &seq, prompt.len())?
                };
                let score = decode(&TokenSequence::from(seq), self.vocab);
                let audio = render_cropped(&score, &self.renderer, cfg.sample_rate, cfg.audio_crop_seconds)
                    .map_err(|source| GrpoError::Render { rollout: id, source })?;
                Ok(Rollout {
                    id,
                    group,
                    prompt: prompt.clone(),
                    completion,
                    score,
                    audio: Some(audio),
                    scores: AestheticScores::uniform(0.0),
                    reward: 0.0,
                    advantage: 0.0,
                    policy_logprobs: old.clone(),
                    ref_logprobs: reference,
                    old_logprobs: old,
                })
            })
            .collect();
        let mut rollouts = sampled.into_iter().collect::<Result<Vec<_>, _>>()?;

        let in_flight = self.scorer.max_in_flight().max(1);
        for chunk in rollouts.chunks_mut(in_flight) {
            chunk.par_iter_mut().try_for_each(|r| -> Result<(), GrpoError> {
                let audio = r.audio.as_ref().expect("audio rendered");
                let scores = self
                    .scorer
                    .score(&RolloutInput { score: &r.score, audio })
                    .map_err(|source| GrpoError::Score { rollout: r.id, source })?;
                let reward = reward_of(&scores, &self.reward);
                if !reward.is_finite() {
                    return Err(GrpoError::BadReward { rollout: r.id, reward });
                }
                r.scores = scores;
                r.reward = reward;
                Ok(())
            })?;
        }
        if !self.keep_audio {
            rollouts.iter_mut().for_each(|r| r.audio = None);
        }
        let mut groups: Vec<Vec<Rollout>> = (0..cfg.prompts_per_iter).map(|_| Vec::with_capacity(g)).collect();
        for r in rollouts {
            groups[r.group].push(r);
        }
        Ok(GroupBatch { groups })
    }

    /// Runs one iteration: rollouts, advantages, one optimizer step.
    pub fn step(&mut self) -> Result<(IterationLog, GroupBatch), GrpoError> {
        let started = Instant::now();
        let iter = self.next_iter;
        let mut batch = self.collect_rollouts(iter)?;
        batch.assign_advantages(self.config.advantage_epsilon);
        let mut out = grpo_loss(&self.policy, &batch, self.config.beta)?;
        clip_grad_norm(&mut out.grads, self.config.grad_clip);
        let lr = lr_at(iter, &self.config);
        self.adam.step(&mut self.policy.data, &out.grads, lr);
        self.next_iter += 1;
        let rewards: Vec<f64> = batch.rollouts().map(|r| r.reward).collect();
        let log = IterationLog {
            iter,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            std_reward: sample_std(&rewards),
            mean_kl: out.mean_kl,
            loss: out.loss,
            lr,
            wall_ms: started.elapsed().as_millis() as u64,
            n_rollouts: rewards.len(),
        };
        log::info!(
            "iter {iter}: reward {:.4} ± {:.4}, kl {:.5}, loss {:.5}, lr {:.3e}, {} ms",
            log.mean_reward,
            log.std_reward,
            log.mean_kl,
            log.loss,
            lr,
            log.wall_ms
        );
        Ok((log, batch))
    }

    /// Runs the remaining iterations. With a run directory, every log line is
    /// appended as it is produced and state is checkpointed at the configured
    /// interval, at the end, and before returning an error.
    pub fn run(
        &mut self,
        dir: Option<&RunDir>,
        mut on_iteration: impl FnMut(&IterationLog, &GroupBatch),
    ) -> Result<Vec<IterationLog>, GrpoError> {
        let mut history = Vec::new();
        while !self.is_done() {
            match self.step() {
                Ok((log, batch)) => {
                    if let Some(d) = dir {
                        d.append_log(&log)?;
                        let every = self.config.checkpoint_every;
                        if (every > 0 && self.next_iter % every == 0) || self.is_done() {
                            d.save(self)?;
                        }
                    }
                    on_iteration(&log, &batch);
                    history.push(log);
                }
                Err(e) => {
                    if let Some(d) = dir {
                        d.save(self)?;
                    }
                    return Err(e);
                }
            }
        }
        Ok(history)
    }

    pub fn into_outcome(self, history: Vec<IterationLog>) -> TrainOutcome {
        TrainOutcome {
            policy: self.policy,
            history,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        self.vocab
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ResumeFile {
    next_iter: usize,
    policy: String,
    reference: String,
    optimizer: String,
    config: GrpoConfig,
}

/// Files of a tuning run: `policy.ckpt`, `reference.ckpt`, `optimizer.bin`,
/// `resume.json` and the append-only `log.jsonl`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunDir { path: path.into() }
    }

    pub fn log_path(&self) -> PathBuf {
        self.path.join("log.jsonl")
    }

    pub fn resume_path(&self) -> PathBuf {
        self.path.join("resume.json")
    }

    pub fn policy_path(&self) -> PathBuf {
        self.path.join("policy.ckpt")
    }

    pub fn reference_path(&self) -> PathBuf {
        self.path.join("reference.ckpt")
    }

    fn optimizer_path(&self) -> PathBuf {
        self.path.join("optimizer.bin")
    }

    pub fn append_log(&self, log: &IterationLog) -> Result<(), GrpoError> {
        std::fs::create_dir_all(&self.path)?;
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(self.log_path())?;
        let line = serde_json::to_string(log).expect("log serializes");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    }

    pub fn read_log(&self) -> Result<Vec<IterationLog>, GrpoError> {
        let text = match std::fs::read_to_string(self.log_path()) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| GrpoError::RunDir(format!("log line: {e}"))))
            .collect()
    }

    /// Keeps only log lines for iterations before `next_iter`, byte for byte.
    pub fn truncate_log(&self, next_iter: usize) -> Result<(), GrpoError> {
        let text = match std::fs::read_to_string(self.log_path()) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let mut kept = String::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let log: IterationLog =
                serde_json::from_str(line).map_err(|e| GrpoError::RunDir(format!("log line: {e}")))?;
            if log.iter < next_iter {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        atomic_write(&self.log_path(), kept.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, trainer: &Trainer<'_>) -> Result<(), GrpoError> {
        let meta = |stage: &str| {
            serde_json::json!({
                "stage": stage,
                "iteration": trainer.next_iter,
                "vocab": trainer.vocab.config(),
            })
        };
        save_checkpoint(&self.policy_path(), &trainer.policy, &meta("grpo-policy"))?;
        if !self.reference_path().exists() {
            save_checkpoint(&self.reference_path(), &trainer.reference, &meta("grpo-reference"))?;
        }
        atomic_write(&self.optimizer_path(), &encode_adam(&trainer.adam.state))?;
        let resume = ResumeFile {
            next_iter: trainer.next_iter,
            policy: "policy.ckpt".into(),
            reference: "reference.ckpt".into(),
            optimizer: "optimizer.bin".into(),
            config: trainer.config.clone(),
        };
        atomic_write(&self.resume_path(), &serde_json::to_vec_pretty(&resume).expect("resume serializes"))?;
        Ok(())
    }

    /// Policy, reference and optimizer state of the latest checkpoint, if
    /// the directory holds one.
    pub fn load(&self) -> Result<Option<(ModelParams<f32>, ModelParams<f32>, TrainerState, GrpoConfig)>, GrpoError> {
        let bytes = match std::fs::read(self.resume_path()) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let resume: ResumeFile = serde_json::from_slice(&bytes).map_err(|e| GrpoError::RunDir(format!("resume.json: {e}")))?;
        let policy = load_checkpoint(&self.path.join(&resume.policy))?.params;
        let reference = load_checkpoint(&self.path.join(&resume.reference))?.params;
        let adam = decode_adam(&std::fs::read(self.path.join(&resume.optimizer))?)?;
        Ok(Some((
            policy,
            reference,
            TrainerState {
                next_iter: resume.next_iter,
                adam,
            },
            resume.config,
        )))
    }
}

/// `step: u64, n: u64, m: [f64; n], v: [f64; n]`, little-endian.
fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + state.m.len() * 16);
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(state.m.len() as u64).to_le_bytes());
    for x in state.m.iter().chain(&state.v) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode_adam(bytes: &[u8]) -> Result<AdamState, GrpoError> {
    let bad = || GrpoError::RunDir("corrupt optimizer state".into());
    let word = |i: usize| -> Result<[u8; 8], GrpoError> {
        bytes.get(i * 8..i * 8 + 8).and_then(|b| b.try_into().ok()).ok_or_else(bad)
    };
    let step = u64::from_le_bytes(word(0)?);
    let n = u64::from_le_bytes(word(1)?) as usize;
    if bytes.len() != 16 + n.checked_mul(16).ok_or_else(bad)? {
        return Err(bad());
    }
    let read = |from: usize| -> Result<Vec<f64>, GrpoError> { (0..n).map(|i| Ok(f64::from_le_bytes(word(from + i)?))).collect() };
    Ok(AdamState {
        step,
        m: read(2)?,
        v: read(2 + n)?,
    })
}

/// One generated piece.
#[derive(Debug, Clone)]
pub struct Generation {
    pub index: usize,
    /// Seed of this sample's prompt and sampling stream.
    pub seed: u64,
    pub prompt: Vec<u32>,
    pub completion: Vec<u32>,
    pub score: Score,
}

/// Draws `n` independent samples; sample `i` uses seed `mix(seed, i)` for
/// both its prompt and its completion.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    params: &ModelParams<f32>,
    vocab: &Vocab,
    n: usize,
    source: &PromptSource,
    pool: Option<&TokenDataset>,
    max_new_tokens: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<Generation>, GrpoError> {
    (0..n)
        .into_par_iter()
        .map(|index| {
            let sample_seed = mix_seed(&[seed, index as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let prompt = prompt_for(source, pool, vocab, &mut rng)?.into_ids();
            let completion = sample_with_log_probs(params, &prompt, max_new_tokens, temperature, &mut rng)?.0.into_ids();
            let mut seq = prompt.clone();
            seq.extend_from_slice(&completion);
            let score = decode(&TokenSequence::from(seq), vocab);
            Ok(Generation {
                index,
                seed: sample_seed,
                prompt,
                completion,
                score,
            })
        })
        .collect()
}

/// Reads a policy checkpoint's vocabulary configuration from its metadata.
pub fn vocab_from_metadata(meta: &serde_json::Value) -> Option<crate::tokenizer::VocabConfig> {
    serde_json::from_value(meta.get("vocab")?.clone()).ok()
}
