use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use symtune_core::grpo::{
    compute_advantages, kl_per_token, lr_at, sample_std, GrpoConfig, GrpoError, IterationLog, RunDir, Trainer,
};
use symtune_core::model::{ModelConfig, ModelParams};
use symtune_core::scorer::{ConstantScorer, ProxyScorer, RolloutInput, ScoreError, Scorer};
use symtune_core::tokenizer::VocabConfig;
use symtune_core::{AestheticScores, RendererChoice, RewardSpec, Vocab};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalized_advantages(rewards in prop::collection::vec(-10.0f64..10.0, 2..16), eps in 0.0f64..1e-3) {
        prop_assume!(sample_std(&rewards) > 1e-3);
        let a = compute_advantages(&rewards, eps);
        prop_assert!(mean(&a).abs() < 1e-6);
        let s = sample_std(&a);
        prop_assert!(s <= 1.0 + 1e-12 && s >= 1.0 - 10.0 * eps / sample_std(&rewards).min(1.0) - 1e-12, "std {}", s);
    }

    #[test]
    fn shift_and_scale_invariance(rewards in prop::collection::vec(-10.0f64..10.0, 2..16), c in -5.0f64..5.0, k in 0.1f64..10.0) {
        prop_assume!(sample_std(&rewards) > 1e-3);
        let base = compute_advantages(&rewards, 1e-4);
        let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
        for (x, y) in base.iter().zip(compute_advantages(&shifted, 1e-4)) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        let scaled: Vec<f64> = rewards.iter().map(|r| r * k).collect();
        for (x, y) in compute_advantages(&rewards, 0.0).iter().zip(compute_advantages(&scaled, 0.0)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_rewards_give_zero(r in -10.0f64..10.0, n in 1usize..16) {
        prop_assert!(compute_advantages(&vec![r; n], 1e-4).iter().all(|a| *a == 0.0));
    }

    #[test]
    fn kl_nonnegative_and_zero_only_at_equality(p in -30.0f64..0.0, q in -30.0f64..0.0) {
        let k = kl_per_token(p, q);
        prop_assert!(k >= 0.0);
        prop_assert_eq!(kl_per_token(p, p), 0.0);
        if (p - q).abs() > 1e-6 {
            prop_assert!(k > 0.0);
        }
    }
}

#[test]
fn schedule_endpoints() {
    let c = GrpoConfig::default();
    assert_eq!(lr_at(0, &c), 1e-4);
    assert_eq!(lr_at(200, &c), 0.0);
    assert_eq!(c.rollouts_per_iter(), 64);
}

fn vocab() -> Vocab {
    Vocab::build(VocabConfig::default()).unwrap()
}

fn base(v: &Vocab) -> ModelParams<f32> {
    ModelParams::init(&ModelConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: v.len(),
        max_seq_len: 48,
        seed: 2,
    })
    .unwrap()
}

fn config(iterations: usize) -> GrpoConfig {
    GrpoConfig {
        prompts_per_iter: 2,
        completions_per_prompt: 2,
        iterations,
        lr_start: 1e-2,
        max_new_tokens: 24,
        sample_rate: 4000,
        audio_crop_seconds: 4.0,
        seed: 5,
        checkpoint_every: 1,
        ..Default::default()
    }
}

fn strip(logs: &[IterationLog]) -> Vec<IterationLog> {
    logs.iter().cloned().map(|l| IterationLog { wall_ms: 0, ..l }).collect()
}

#[test]
fn zero_beta_equal_rewards_leave_parameters_untouched() {
    let v = vocab();
    let scorer = ConstantScorer(AestheticScores::uniform(4.0));
    let b = base(&v);
    let cfg = GrpoConfig { beta: 0.0, ..config(3) };
    let mut t = Trainer::new(b.clone(), cfg, &v, &scorer, RewardSpec::default(), RendererChoice::Builtin, None).unwrap();
    t.run(None, |_, _| {}).unwrap();
    assert_eq!(t.policy.data, b.data);
}

#[test]
fn runs_replay_identically() {
    let v = vocab();
    let run = || {
        let mut t = Trainer::new(base(&v), config(3), &v, &ProxyScorer, RewardSpec::default(), RendererChoice::Builtin, None).unwrap();
        let h = t.run(None, |_, _| {}).unwrap();
        (t.policy.data, strip(&h))
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.1.iter().all(|l| l.mean_reward.is_finite() && l.loss.is_finite() && l.n_rollouts == 4));
}

/// Fails every call from the `fail_from`-th on.
struct Flaky {
    calls: AtomicUsize,
    fail_from: usize,
}

impl Scorer for Flaky {
    fn score(&self, input: &RolloutInput<'_>) -> Result<AestheticScores, ScoreError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.fail_from {
            return Err(ScoreError::Malformed("scripted failure".into()));
        }
        ProxyScorer.score(input)
    }
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let v = vocab();
    let whole_dir = tempfile::tempdir().unwrap();
    let whole = RunDir::new(whole_dir.path());
    let mut t = Trainer::new(base(&v), config(4), &v, &ProxyScorer, RewardSpec::default(), RendererChoice::Builtin, None).unwrap();
    t.run(Some(&whole), |_, _| {}).unwrap();
    let expected = t.policy.data.clone();

    let dir = tempfile::tempdir().unwrap();
    let rd = RunDir::new(dir.path());
    let flaky = Flaky { calls: AtomicUsize::new(0), fail_from: 8 };
    let mut t = Trainer::new(base(&v), config(4), &v, &flaky, RewardSpec::default(), RendererChoice::Builtin, None).unwrap();
    let err = t.run(Some(&rd), |_, _| {}).unwrap_err();
    assert!(matches!(err, GrpoError::Score { .. }));
    assert_eq!(rd.read_log().unwrap().len(), 2);

    let (policy, reference, state, cfg) = rd.load().unwrap().expect("checkpoint written");
    assert_eq!(state.next_iter, 2);
    rd.truncate_log(state.next_iter).unwrap();
    let mut t = Trainer::resume(policy, reference, state, cfg, &v, &ProxyScorer, RewardSpec::default(), RendererChoice::Builtin, None).unwrap();
    t.run(Some(&rd), |_, _| {}).unwrap();
    assert_eq!(t.policy.data, expected);
    assert_eq!(strip(&rd.read_log().unwrap()), strip(&whole.read_log().unwrap()));
}

#[test]
fn strong_anchor_with_constant_reward_keeps_kl_small() {
    let v = vocab();
    let scorer = ConstantScorer(AestheticScores::uniform(6.0));
    let cfg = GrpoConfig { beta: 10.0, ..config(20) };
    let mut t = Trainer::new(base(&v), cfg, &v, &scorer, RewardSpec::default(), RendererChoice::Builtin, None).unwrap();
    let h = t.run(None, |_, _| {}).unwrap();
    assert_eq!(h.len(), 20);
    assert!(h.iter().all(|l| l.mean_kl < 0.01));
}
