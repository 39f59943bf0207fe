//! Central finite differences against the analytic gradients.

use symtune_core::grpo::{grpo_loss, GroupBatch, Rollout};
use symtune_core::midi::Score;
use symtune_core::model::{log_probs, loss_and_grads, ModelParams};
use symtune_core::scorer::AestheticScores;

const H: f64 = 1e-5;

/// Central differences of `f` for every parameter.
pub fn numeric(params: &ModelParams<f64>, f: impl Fn(&ModelParams<f64>) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..p.data.len())
        .map(|i| {
            let x = p.data[i];
            p.data[i] = x + H;
            let up = f(&p);
            p.data[i] = x - H;
            let down = f(&p);
            p.data[i] = x;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Worst coordinate error relative to the larger magnitude (with a small
/// absolute floor for near-zero entries) and the relative error of the
/// whole gradient vector.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let mut worst: f64 = 0.0;
    let (mut diff2, mut norm2) = (0.0, 0.0);
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        worst = worst.max((a - n).abs() / (scale + 1e-7));
        diff2 += (a - n).powi(2);
        norm2 += scale.powi(2);
    }
    (worst, (diff2 / norm2).sqrt())
}

pub fn ce_case() -> (f64, f64) {
    let p = super::tiny_model_f64(12, 3);
    let batch = vec![vec![1u32, 4, 7, 2, 9, 11, 3, 0, 0], vec![1, 5, 5, 6, 10, 8, 2, 4, 7]];
    let analytic = loss_and_grads(&p, &batch).unwrap().grads;
    let num = numeric(&p, |q| loss_and_grads(q, &batch).unwrap().loss);
    compare(&analytic, &num)
}

fn rollout(p: &ModelParams<f64>, prompt: Vec<u32>, completion: Vec<u32>, advantage: f64, shift: f64) -> Rollout {
    let mut seq = prompt.clone();
    seq.extend_from_slice(&completion);
    let lp = log_probs(p, &seq, prompt.len()).unwrap();
    let old: Vec<f64> = lp.iter().enumerate().map(|(i, x)| x + shift * ((i % 3) as f64 - 1.0)).collect();
    let reference: Vec<f64> = lp.iter().enumerate().map(|(i, x)| x - shift * ((i % 2) as f64 + 0.5)).collect();
    Rollout {
        id: 0,
        group: 0,
        prompt,
        completion,
        score: Score::empty(480),
        audio: None,
        scores: AestheticScores::uniform(5.0),
        reward: 0.0,
        advantage,
        policy_logprobs: lp,
        ref_logprobs: reference,
        old_logprobs: old,
    }
}

pub fn grpo_case() -> (f64, f64) {
    let p = super::tiny_model_f64(12, 4);
    let batch = GroupBatch {
        groups: vec![
            vec![rollout(&p, vec![1, 2], vec![5, 6, 7, 8], 1.2, 0.1), rollout(&p, vec![1, 2], vec![9, 3], -0.7, 0.2)],
            vec![rollout(&p, vec![1, 3, 4], vec![10, 11, 2, 2, 6], -0.5, 0.15), rollout(&p, vec![1, 3, 4], vec![7], 0.9, 0.05)],
        ],
    };
    let beta = 0.3;
    let analytic = grpo_loss(&p, &batch, beta).unwrap().grads;
    let num = numeric(&p, |q| grpo_loss(q, &batch, beta).unwrap().loss);
    compare(&analytic, &num)
}

