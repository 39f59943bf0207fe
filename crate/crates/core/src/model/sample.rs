use rand::Rng;

use super::forward::DecodeState;
use super::loss::log_softmax_row;
use super::params::{ModelParams, Scalar};
use super::ModelError;
use crate::tokenizer::TokenSequence;

/// Draws one token id from `softmax(logits / temperature)`; temperature 0
/// picks the first maximum.
pub fn sample_from_logits<T: Scalar, R: Rng + ?Sized>(logits: &[T], temperature: f64, rng: &mut R) -> u32 {
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, x) in logits.iter().enumerate() {
            if *x > logits[best] {
                best = i;
            }
        }
        return best as u32;
    }
    let scaled: Vec<f64> = logits.iter().map(|x| x.as_f64() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as u32;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u32
}

/// Ancestral sampling of up to `max_new_tokens` tokens after `prompt`,
/// truncated at the model's context length. Returns the completion only.
pub fn sample<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    prompt: &[u32],
    max_new_tokens: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<TokenSequence, ModelError> {
    Ok(sample_with_log_probs(params, prompt, max_new_tokens, temperature, rng)?.0)
}

/// As [`sample`], also returning the untempered log-probability of each
/// sampled token. These equal [`log_probs`](super::log_probs) of the full
/// sequence bit for bit.
pub fn sample_with_log_probs<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    prompt: &[u32],
    max_new_tokens: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<(TokenSequence, Vec<f64>), ModelError> {
    if prompt.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if !(temperature >= 0.0) {
        return Err(ModelError::InvalidConfig(format!("temperature {temperature} must be non-negative")));
    }
    let max_len = params.config.max_seq_len;
    if prompt.len() > max_len {
        return Err(ModelError::SequenceTooLong {
            len: prompt.len(),
            max: max_len,
        });
    }
    let budget = max_new_tokens.min(max_len - prompt.len());
    let mut state = DecodeState::new(params);
    let mut logits = Vec::new();
    for &tok in prompt {
        logits = state.step(params, tok)?;
    }
    let mut out = TokenSequence::default();
    let mut lps = Vec::with_capacity(budget);
    for i in 0..budget {
        let next = sample_from_logits(&logits, temperature, rng);
        out.push(next);
        lps.push(log_softmax_row(&logits)[next as usize]);
        if i + 1 < budget {
            logits = state.step(params, next)?;
        }
    }
    Ok((out, lps))
}
