//! Group relative policy optimization against an audio reward.
//!
//! Each iteration samples a group of completions per prompt, renders and
//! scores them, normalizes rewards within each group and takes one policy
//! step on the unclipped ratio objective with a per-token KL penalty towards the
//! frozen reference model.

mod objective;
mod prompts;
mod trainer;

use serde::{Deserialize, Serialize};

pub use objective::{grpo_loss, GrpoLoss};
pub use prompts::{dataset_prompt, procedural_prompt, PromptSource};
pub use trainer::{generate, vocab_from_metadata, Generation, IterationLog, RunDir, TrainOutcome, Trainer, TrainerState};

use crate::midi::Score;
use crate::model::ModelError;
use crate::render::{AudioClip, RenderError};
use crate::scorer::{AestheticScores, ScoreError};

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("invalid GRPO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("rendering rollout {rollout}: {source}")]
    Render { rollout: usize, source: RenderError },
    #[error("scoring rollout {rollout}: {source}")]
    Score { rollout: usize, source: ScoreError },
    #[error("non-finite reward {reward} for rollout {rollout}")]
    BadReward { rollout: usize, reward: f64 },
    #[error("prompt source: {0}")]
    Prompt(String),
    #[error("run directory: {0}")]
    RunDir(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub prompts_per_iter: usize,
    pub completions_per_prompt: usize,
    pub temperature: f64,
    pub beta: f64,
    pub iterations: usize,
    pub lr_start: f64,
    pub max_new_tokens: usize,
    pub audio_crop_seconds: f64,
    pub seed: u64,
    pub prompt_source: PromptSource,
    pub advantage_epsilon: f64,
    pub sample_rate: u32,
    /// L2 gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            prompts_per_iter: 8,
            completions_per_prompt: 8,
            temperature: 1.0,
            beta: 0.04,
            iterations: 200,
            lr_start: 1e-4,
            max_new_tokens: 256,
            audio_crop_seconds: 10.0,
            seed: 0,
            prompt_source: PromptSource::Procedural,
            advantage_epsilon: 1e-4,
            sample_rate: crate::render::DEFAULT_SAMPLE_RATE,
            grad_clip: 1.0,
            checkpoint_every: 10,
        }
    }
}

impl GrpoConfig {
    pub fn rollouts_per_iter(&self) -> usize {
        self.prompts_per_iter * self.completions_per_prompt
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.completions_per_prompt < 2 {
            return bad("completions_per_prompt must be at least 2");
        }
        if self.prompts_per_iter == 0 {
            return bad("prompts_per_iter must be at least 1");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be non-negative");
        }
        if !(self.lr_start >= 0.0) || !(self.advantage_epsilon >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("lr_start, advantage_epsilon and grad_clip must be non-negative");
        }
        if !(self.audio_crop_seconds > 0.0) || self.sample_rate == 0 {
            return bad("audio_crop_seconds and sample_rate must be positive");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1");
        }
        if let PromptSource::Dataset { prompt_len: 0 } = self.prompt_source {
            return bad("dataset prompt_len must be at least 1");
        }
        Ok(())
    }
}

/// One sampled completion and everything the update needs about it.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub id: usize,
    pub group: usize,
    pub prompt: Vec<u32>,
    pub completion: Vec<u32>,
    pub score: Score,
    /// Dropped after scoring unless the caller asks to keep it.
    pub audio: Option<AudioClip>,
    pub scores: AestheticScores,
    pub reward: f64,
    pub advantage: f64,
    /// Current-policy log-probs of the completion tokens.
    pub policy_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    /// Log-probs under the policy that generated the completion.
    pub old_logprobs: Vec<f64>,
}

/// Prompt-grouped rollouts; advantages are constant within a rollout.
#[derive(Debug, Clone, Default)]
pub struct GroupBatch {
    pub groups: Vec<Vec<Rollout>>,
}

impl GroupBatch {
    pub fn rollouts(&self) -> impl Iterator<Item = &Rollout> {
        self.groups.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fills every rollout's advantage from its group's rewards.
    pub fn assign_advantages(&mut self, epsilon: f64) {
        for group in &mut self.groups {
            let rewards: Vec<f64> = group.iter().map(|r| r.reward).collect();
            for (r, a) in group.iter_mut().zip(compute_advantages(&rewards, epsilon)) {
                r.advantage = a;
            }
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n − 1) standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// `Â_i = (r_i − mean(r)) / (std(r) + epsilon)` with the sample standard
/// deviation; a group whose rewards are all equal gets all-zero advantages.
pub fn compute_advantages(rewards: &[f64], epsilon: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let spread = rewards.iter().any(|&r| r != rewards[0]);
    if !spread {
        return vec![0.0; rewards.len()];
    }
    let m = mean(rewards);
    let s = sample_std(rewards);
    rewards.iter().map(|r| (r - m) / (s + epsilon)).collect()
}

/// Per-token KL estimate `exp(ref − pol) − (ref − pol) − 1`.
pub fn kl_per_token(policy_logprob: f64, ref_logprob: f64) -> f64 {
    let x = ref_logprob - policy_logprob;
    (x.exp_m1() - x).max(0.0)
}

/// Linear decay from `lr_start` at iteration 0 to 0 at `iterations`.
pub fn lr_at(iteration: usize, config: &GrpoConfig) -> f64 {
    if config.iterations == 0 {
        return 0.0;
    }
    let frac = iteration.min(config.iterations) as f64 / config.iterations as f64;
    config.lr_start * (1.0 - frac)
}
