use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::forward;
use super::loss::{log_softmax_row, loss_and_grads};
use super::optim::{clip_grad_norm, Adam};
use super::params::{ModelConfig, ModelParams};
use super::ModelError;
use crate::tokenizer::{random_crop, TokenDataset, PAD_ID};
use crate::util::{mix_seed, stable_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Crop length in tokens; clamped to the model's context length.
    pub crop_len: usize,
    pub crops_per_file: usize,
    pub learning_rate: f64,
    /// L2 gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub holdout_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 3,
            batch_size: 8,
            crop_len: 512,
            crops_per_file: 1,
            learning_rate: 1e-3,
            grad_clip: 1.0,
            holdout_fraction: 0.1,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Record indices of each partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Deterministic partition by file-id hash: the first `holdout_fraction` of
/// files in hash order are held out, then `validation_fraction` of the rest
/// is used for validation and the remainder for training.
pub fn split_by_hash(file_ids: &[&str], holdout_fraction: f64, validation_fraction: f64) -> Split {
    let mut order: Vec<usize> = (0..file_ids.len()).collect();
    order.sort_by(|&a, &b| {
        (stable_hash(file_ids[a]), file_ids[a]).cmp(&(stable_hash(file_ids[b]), file_ids[b]))
    });
    let n = order.len();
    let n_hold = ((n as f64) * holdout_fraction).round() as usize;
    let rest = n - n_hold.min(n);
    let n_val = ((rest as f64) * validation_fraction).round() as usize;
    let mut holdout = order[..n_hold.min(n)].to_vec();
    let mut validation = order[n_hold.min(n)..n_hold.min(n) + n_val.min(rest)].to_vec();
    let mut train = order[n_hold.min(n) + n_val.min(rest)..].to_vec();
    holdout.sort_unstable();
    validation.sort_unstable();
    train.sort_unstable();
    Split {
        train,
        validation,
        holdout,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the per-batch training losses.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParams<f32>,
    pub history: Vec<EpochStats>,
    pub split: Split,
}

/// Mean next-token negative log-likelihood over non-PAD targets.
pub fn mean_nll(params: &ModelParams<f32>, sequences: &[Vec<u32>]) -> Result<Option<f64>, ModelError> {
    let v = params.config.vocab_size;
    let parts: Vec<Result<(f64, usize), ModelError>> = sequences
        .par_iter()
        .map(|seq| {
            let end = seq.iter().rposition(|&t| t != PAD_ID).map_or(0, |i| i + 1);
            let seq = &seq[..end];
            if seq.len() < 2 {
                return Ok((0.0, 0));
            }
            let logits = forward(params, seq)?;
            let mut nll = 0.0;
            let mut n = 0;
            for t in 0..seq.len() - 1 {
                if seq[t + 1] != PAD_ID {
                    nll -= log_softmax_row(&logits[t * v..(t + 1) * v])[seq[t + 1] as usize];
                    n += 1;
                }
            }
            Ok((nll, n))
        })
        .collect();
    let (mut total, mut count) = (0.0, 0);
    for p in parts {
        let (l, n) = p?;
        total += l;
        count += n;
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Next-token pretraining with Adam over random crops of the training split.
pub fn pretrain(dataset: &TokenDataset, model: &ModelConfig, cfg: &PretrainConfig) -> Result<PretrainOutcome, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset("no records".into()));
    }
    if cfg.batch_size == 0 || cfg.crops_per_file == 0 || cfg.crop_len < 2 {
        return Err(ModelError::InvalidConfig("batch_size, crops_per_file must be ≥ 1 and crop_len ≥ 2".into()));
    }
    let ids: Vec<&str> = dataset.records.iter().map(|r| r.file_id.as_str()).collect();
    let split = split_by_hash(&ids, cfg.holdout_fraction, cfg.validation_fraction);
    let train: Vec<usize> = split
        .train
        .iter()
        .copied()
        .filter(|&i| dataset.records[i].tokens.len() >= 2)
        .collect();
    if train.is_empty() {
        return Err(ModelError::EmptyDataset("training split has no usable sequences".into()));
    }
    let crop_len = cfg.crop_len.min(model.max_seq_len);
    let validation: Vec<Vec<u32>> = split
        .validation
        .iter()
        .map(|&i| {
            let ids = dataset.records[i].tokens.ids();
            ids[..ids.len().min(crop_len)].to_vec()
        })
        .collect();

    let mut params = ModelParams::<f32>::init(model)?;
    let mut adam = Adam::new(params.data.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64]));
        let mut items: Vec<usize> = train
            .iter()
            .flat_map(|&i| std::iter::repeat(i).take(cfg.crops_per_file))
            .collect();
        items.shuffle(&mut rng);
        let crops: Vec<Vec<u32>> = items
            .iter()
            .map(|&i| random_crop(&dataset.records[i].tokens, crop_len, &mut rng).into_ids())
            .collect();
        let mut losses = Vec::new();
        for batch in crops.chunks(cfg.batch_size) {
            let mut out = match loss_and_grads(&params, batch) {
                Ok(out) => out,
                Err(ModelError::AllPadBatch) => continue,
                Err(e) => return Err(e),
            };
            clip_grad_norm(&mut out.grads, cfg.grad_clip);
            adam.step(&mut params.data, &out.grads, cfg.learning_rate);
            losses.push(out.loss);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let validation_loss = mean_nll(&params, &validation)?;
        log::info!(
            "pretrain epoch {epoch}/{}: train {train_loss:.4}, validation {}",
            cfg.epochs,
            validation_loss.map_or("n/a".to_string(), |v| format!("{v:.4}"))
        );
        history.push(EpochStats {
            epoch,
            train_loss,
            validation_loss,
            steps: losses.len(),
        });
    }
    Ok(PretrainOutcome { params, history, split })
}
