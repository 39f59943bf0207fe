use rayon::prelude::*;

use super::{kl_per_token, GroupBatch};
use crate::model::{log_probs_with_trace, sequence_log_prob_backward, ModelError, ModelParams, Scalar};

#[derive(Debug, Clone)]
pub struct GrpoLoss<T> {
    pub loss: f64,
    /// Mean per-token KL estimate against the reference model.
    pub mean_kl: f64,
    pub mean_ratio: f64,
    pub n_tokens: usize,
    pub grads: Vec<T>,
}

/// `L = −(1/N) Σ_i Σ_t [ρ_{i,t} Â_i − β k_{i,t}]` over every completion token
/// of every rollout, with `ρ = exp(log π_θ − log π_old)` and
/// `k = exp(log π_ref − log π_θ) − (log π_ref − log π_θ) − 1`.
///
/// `old_logprobs` and `ref_logprobs` are constants; an empty
/// `old_logprobs` means the rollout was generated by the current policy.
pub fn grpo_loss<T: Scalar>(policy: &ModelParams<T>, batch: &GroupBatch, beta: f64) -> Result<GrpoLoss<T>, ModelError> {
    let rollouts: Vec<_> = batch.rollouts().filter(|r| !r.completion.is_empty()).collect();
    let n_tokens: usize = rollouts.iter().map(|r| r.completion.len()).sum();
    if n_tokens == 0 {
        return Ok(GrpoLoss {
            loss: 0.0,
            mean_kl: 0.0,
            mean_ratio: 1.0,
            n_tokens: 0,
            grads: policy.zeros_like(),
        });
    }
    let inv_n = 1.0 / n_tokens as f64;
    let parts: Vec<Result<(f64, f64, f64, Vec<T>), ModelError>> = rollouts
        .par_iter()
        .map(|r| {
            let mut seq = r.prompt.clone();
            seq.extend_from_slice(&r.completion);
            let (logp, trace) = log_probs_with_trace(policy, &seq, r.prompt.len())?;
            assert_eq!(r.ref_logprobs.len(), logp.len(), "reference log-probs misaligned");
            let old = if r.old_logprobs.is_empty() { &logp } else { &r.old_logprobs };
            assert_eq!(old.len(), logp.len(), "old log-probs misaligned");
            let (mut obj, mut kl, mut ratio_sum) = (0.0, 0.0, 0.0);
            let mut dlogp = vec![0.0; logp.len()];
            for t in 0..logp.len() {
                let ratio = (logp[t] - old[t]).exp();
                let k = kl_per_token(logp[t], r.ref_logprobs[t]);
                obj += ratio * r.advantage - beta * k;
                kl += k;
                ratio_sum += ratio;
                let dk = 1.0 - (r.ref_logprobs[t] - logp[t]).exp();
                dlogp[t] = -inv_n * (ratio * r.advantage - beta * dk);
            }
            let mut grads = policy.zeros_like();
            sequence_log_prob_backward(policy, &trace, &seq, r.prompt.len(), &dlogp, &mut grads);
            Ok((obj, kl, ratio_sum, grads))
        })
        .collect();
    let mut grads = policy.zeros_like();
    let (mut obj, mut kl, mut ratio) = (0.0, 0.0, 0.0);
    for p in parts {
        let (o, k, q, g) = p?;
        obj += o;
        kl += k;
        ratio += q;
        for (a, b) in grads.iter_mut().zip(g) {
            *a = *a + b;
        }
    }
    Ok(GrpoLoss {
        loss: -obj * inv_n,
        mean_kl: kl * inv_n,
        mean_ratio: ratio * inv_n,
        n_tokens,
        grads,
    })
}
