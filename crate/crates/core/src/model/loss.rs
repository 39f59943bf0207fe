use rayon::prelude::*;

use super::forward::{backward, forward_trace, ForwardTrace};
use super::params::{ModelParams, Scalar};
use super::ModelError;
use crate::tokenizer::PAD_ID;

/// Numerically stable `log softmax` of one logits row, in `f64`.
pub fn log_softmax_row<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x.as_f64() - lse).collect()
}

fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone)]
pub struct BatchLoss<T> {
    /// Mean negative log-likelihood over non-PAD targets.
    pub loss: f64,
    pub n_targets: usize,
    pub grads: Vec<T>,
}

/// Trailing PAD tokens never influence non-PAD targets, so they are dropped
/// before the forward pass.
fn trimmed(tokens: &[u32]) -> &[u32] {
    let end = tokens.iter().rposition(|&t| t != PAD_ID).map_or(0, |i| i + 1);
    &tokens[..end]
}

fn target_count(tokens: &[u32]) -> usize {
    tokens.iter().skip(1).filter(|&&t| t != PAD_ID).count()
}

/// Next-token cross-entropy over a batch, averaged over every non-PAD target
/// position in the batch, with exact gradients.
pub fn loss_and_grads<T: Scalar>(params: &ModelParams<T>, batch: &[Vec<u32>]) -> Result<BatchLoss<T>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let total: usize = batch.iter().map(|s| target_count(s)).sum();
    if total == 0 {
        return Err(ModelError::AllPadBatch);
    }
    let norm = T::of_f64(1.0 / total as f64);
    let v = params.config.vocab_size;
    let parts: Vec<Result<Option<(f64, Vec<T>)>, ModelError>> = batch
        .par_iter()
        .map(|seq| {
            let seq = trimmed(seq);
            if target_count(seq) == 0 {
                return Ok(None);
            }
            let trace = forward_trace(params, seq)?;
            let n = seq.len();
            let mut dlogits = vec![T::zero(); n * v];
            let mut nll = 0.0;
            for t in 0..n - 1 {
                let target = seq[t + 1];
                if target == PAD_ID {
                    continue;
                }
                let row = &trace.logits[t * v..(t + 1) * v];
                nll -= log_softmax_row(row)[target as usize];
                let p = softmax_row(row);
                let d = &mut dlogits[t * v..(t + 1) * v];
                for (j, (g, pj)) in d.iter_mut().zip(p).enumerate() {
                    *g = if j == target as usize { (pj - T::one()) * norm } else { pj * norm };
                }
            }
            let mut grads = params.zeros_like();
            backward(params, &trace, &dlogits, &mut grads);
            Ok(Some((nll, grads)))
        })
        .collect();

    let mut grads = params.zeros_like();
    let mut nll = 0.0;
    for part in parts {
        if let Some((l, g)) = part? {
            nll += l;
            for (a, b) in grads.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
    }
    Ok(BatchLoss {
        loss: nll / total as f64,
        n_targets: total,
        grads,
    })
}

fn check_prompt(sequence: &[u32], prompt_len: usize) -> Result<(), ModelError> {
    if prompt_len == 0 || prompt_len >= sequence.len() {
        return Err(ModelError::PromptTooLong {
            prompt_len,
            len: sequence.len(),
        });
    }
    Ok(())
}

/// Log-probability of every completion token `sequence[prompt_len..]` given
/// all tokens before it.
pub fn log_probs<T: Scalar>(params: &ModelParams<T>, sequence: &[u32], prompt_len: usize) -> Result<Vec<f64>, ModelError> {
    Ok(log_probs_with_trace(params, sequence, prompt_len)?.0)
}

/// As [`log_probs`], also returning the forward trace for a later
/// [`sequence_log_prob_backward`].
pub fn log_probs_with_trace<T: Scalar>(
    params: &ModelParams<T>,
    sequence: &[u32],
    prompt_len: usize,
) -> Result<(Vec<f64>, ForwardTrace<T>), ModelError> {
    check_prompt(sequence, prompt_len)?;
    let trace = forward_trace(params, sequence)?;
    let v = params.config.vocab_size;
    let lp = (prompt_len..sequence.len())
        .map(|t| log_softmax_row(&trace.logits[(t - 1) * v..t * v])[sequence[t] as usize])
        .collect();
    Ok((lp, trace))
}

/// Accumulates `Σ_t dlogp[t] · ∂ log p(token_t)/∂θ` into `grads`, where
/// `dlogp` is indexed like the output of [`log_probs`].
pub fn sequence_log_prob_backward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    sequence: &[u32],
    prompt_len: usize,
    dlogp: &[f64],
    grads: &mut [T],
) {
    let v = params.config.vocab_size;
    let n = sequence.len();
    assert_eq!(dlogp.len(), n - prompt_len, "one coefficient per completion token");
    let mut dlogits = vec![T::zero(); n * v];
    for (i, t) in (prompt_len..n).enumerate() {
        if dlogp[i] == 0.0 {
            continue;
        }
        let c = T::of_f64(dlogp[i]);
        let p = softmax_row(&trace.logits[(t - 1) * v..t * v]);
        let d = &mut dlogits[(t - 1) * v..t * v];
        for (j, (g, pj)) in d.iter_mut().zip(p).enumerate() {
            let onehot = if j == sequence[t] as usize { T::one() } else { T::zero() };
            *g = c * (onehot - pj);
        }
    }
    backward(params, trace, &dlogits, grads);
}
