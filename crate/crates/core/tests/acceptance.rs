//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion, nonzero exit
//! status if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symtune_core::corpus::{dataset_from_scores, synth_corpus};
use symtune_core::features::{diversity, extract_features, scale_consistency, ROLL_BEATS, ROLL_STEPS_PER_BEAT};
use symtune_core::grpo::{
    compute_advantages, generate, kl_per_token, lr_at, sample_std, GrpoConfig, IterationLog, PromptSource, Trainer,
};
use symtune_core::midi::{Note, Score};
use symtune_core::model::{pretrain, ModelConfig, ModelParams, PretrainConfig};
use symtune_core::render::{render_builtin, render_cropped, write_wav};
use symtune_core::scorer::{
    score_proxy, ConstantScorer, MockReply, MockScorerServer, ProxyScorer, RemoteConfig, RemoteScorer, RolloutInput,
    ScoreError,
};
use symtune_core::tokenizer::{decode, VocabConfig};
use symtune_core::{AestheticScores, RendererChoice, RewardSpec, TokenSequence, Vocab};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    if took > limit {
        Err(format!("took {took:.1?}, limit {limit:?}"))
    } else {
        Ok(took)
    }
}

fn grpo_math() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_mean, mut min_std, mut max_std) = (0.0f64, f64::INFINITY, 0.0f64);
    for _ in 0..1000 {
        let scale = rng.random_range(0.5..5.0);
        let rewards: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..10.0) * scale).collect();
        let a = compute_advantages(&rewards, 1e-4);
        worst_mean = worst_mean.max((a.iter().sum::<f64>() / 8.0).abs());
        let s = sample_std(&a);
        min_std = min_std.min(s);
        max_std = max_std.max(s);
    }
    let mut zeros = true;
    for _ in 0..1000 {
        let r = rng.random_range(0.0..10.0);
        zeros &= compute_advantages(&[r; 8], 1e-4).iter().all(|x| *x == 0.0);
    }
    let took = within(Duration::from_secs(1), started)?;
    ensure(
        worst_mean < 1e-6 && min_std >= 0.999 && max_std <= 1.0 && zeros,
        format!("max |mean| {worst_mean:.2e}, std in [{min_std:.6}, {max_std:.6}], zero-spread exact: {zeros}, {took:.1?}"),
    )
}

fn gradients() -> Check {
    let started = Instant::now();
    let (ce_worst, ce_global) = common::fd::ce_case();
    let (g_worst, g_global) = common::fd::grpo_case();
    let took = within(Duration::from_secs(120), started)?;
    ensure(
        ce_worst < 1e-3 && ce_global < 1e-3 && g_worst < 1e-3 && g_global < 1e-3,
        format!("CE worst {ce_worst:.1e} / global {ce_global:.1e}; GRPO worst {g_worst:.1e} / global {g_global:.1e}; {took:.1?}"),
    )
}

/// Desk-scale setup shared by the closed-loop criteria.
struct Desk {
    vocab: Vocab,
    base: ModelParams<f32>,
    pretrain_time: Duration,
}

const CORPUS_FILES: usize = 240;
const MAX_NEW_TOKENS: usize = 120;
const EVAL_SAMPLES: usize = 100;
const EVAL_SEED: u64 = 99;
const SAMPLE_RATE: u32 = 8000;

fn desk() -> Desk {
    let started = Instant::now();
    let vocab = Vocab::build(VocabConfig::default()).unwrap();
    let dataset = dataset_from_scores(&synth_corpus(CORPUS_FILES, 7), &vocab);
    let model = ModelConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        d_ff: 256,
        vocab_size: vocab.len(),
        max_seq_len: 256,
        seed: 1,
    };
    let cfg = PretrainConfig {
        epochs: 6,
        batch_size: 8,
        crop_len: 256,
        learning_rate: 3e-3,
        ..Default::default()
    };
    let out = pretrain(&dataset, &model, &cfg).unwrap();
    Desk {
        vocab,
        base: out.params,
        pretrain_time: started.elapsed(),
    }
}

fn loop_config(iterations: usize, beta: f64) -> GrpoConfig {
    GrpoConfig {
        prompts_per_iter: 4,
        completions_per_prompt: 4,
        iterations,
        beta,
        lr_start: 1e-3,
        max_new_tokens: MAX_NEW_TOKENS,
        sample_rate: SAMPLE_RATE,
        seed: 3,
        ..Default::default()
    }
}

fn tune(desk: &Desk, cfg: GrpoConfig) -> (ModelParams<f32>, Vec<IterationLog>) {
    let mut t = Trainer::new(desk.base.clone(), cfg, &desk.vocab, &ProxyScorer, RewardSpec::default(), RendererChoice::Builtin, None).unwrap();
    let history = t.run(None, |_, _| {}).unwrap();
    (t.policy, history)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    s / n as f64
}

struct Eval {
    scores: Vec<Score>,
    rewards: Vec<f64>,
}

fn evaluate(desk: &Desk, params: &ModelParams<f32>) -> Eval {
    let gens = generate(params, &desk.vocab, EVAL_SAMPLES, &PromptSource::Procedural, None, MAX_NEW_TOKENS, 1.0, EVAL_SEED).unwrap();
    let scores: Vec<Score> = gens.into_iter().map(|g| g.score).collect();
    let rewards = scores
        .iter()
        .map(|s| {
            let audio = render_cropped(s, &RendererChoice::Builtin, SAMPLE_RATE, 10.0).unwrap();
            score_proxy(&RolloutInput { score: s, audio: &audio }).content_enjoyment
        })
        .collect();
    Eval { scores, rewards }
}

fn kl_estimator(desk: &Desk) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut negative = 0;
    let mut zero_at_equal = true;
    for _ in 0..100_000 {
        let p = -rng.random_range(0.0..20.0);
        let q = -rng.random_range(0.0..20.0);
        negative += (kl_per_token(p, q) < 0.0) as usize;
        zero_at_equal &= kl_per_token(p, p) == 0.0;
    }
    let scorer = ConstantScorer(AestheticScores::uniform(5.0));
    let mut t = Trainer::new(desk.base.clone(), loop_config(20, 10.0), &desk.vocab, &scorer, RewardSpec::default(), RendererChoice::Builtin, None).unwrap();
    let history = t.run(None, |_, _| {}).unwrap();
    let worst = history.iter().map(|l| l.mean_kl).fold(0.0, f64::max);
    ensure(
        negative == 0 && zero_at_equal && history.len() == 20 && worst < 0.01,
        format!("negative estimates {negative}/100000, zero at equality: {zero_at_equal}, anchored max mean KL over 20 iterations {worst:.2e}"),
    )
}

fn reward_ascent(desk: &Desk, history: &[IterationLog], took: Duration) -> Check {
    let first = mean(history[..10].iter().map(|l| l.mean_reward));
    let last = mean(history[history.len() - 10..].iter().map(|l| l.mean_reward));
    let total = took + desk.pretrain_time;
    ensure(
        history.len() == 50 && last - first >= 0.5 && total < Duration::from_secs(30 * 60),
        format!(
            "first 10 iterations {first:.3}, last 10 {last:.3}, gain {:.3} (need >= 0.5); pretrain {:.1?} + tuning {took:.1?}",
            last - first,
            desk.pretrain_time
        ),
    )
}

fn diversity_collapse(a: &Eval, b: &Eval, b_history: &[IterationLog], a_history: &[IterationLog], took: Duration) -> Check {
    let da = diversity(&a.scores, ROLL_BEATS, ROLL_STEPS_PER_BEAT).unwrap();
    let db = diversity(&b.scores, ROLL_BEATS, ROLL_STEPS_PER_BEAT).unwrap();
    let (ra, rb) = (mean(a.rewards.iter().copied()), mean(b.rewards.iter().copied()));
    let train_a = mean(a_history[a_history.len() - 10..].iter().map(|l| l.mean_reward));
    let train_b = mean(b_history[b_history.len() - 10..].iter().map(|l| l.mean_reward));
    ensure(
        db < da && rb >= ra && took < Duration::from_secs(90 * 60),
        format!(
            "diversity (a) beta=0.04 {da:.4} vs (b) beta=0 {db:.4}; mean sample reward (a) {ra:.3} vs (b) {rb:.3} \
             (last-10 training reward {train_a:.3} vs {train_b:.3}); {took:.1?}"
        ),
    )
}

fn feature_shift(base: &Eval, tuned: &Eval) -> Check {
    let stats = |e: &Eval| {
        let f: Vec<_> = e.scores.iter().map(extract_features).collect();
        (
            mean(f.iter().map(|x| x.n_notes as f64)),
            mean(f.iter().map(|x| x.empty_beat_rate)),
            mean(f.iter().map(|x| x.polyphony_rate)),
        )
    };
    let (bn, be, bp) = stats(base);
    let (tn, te, tp) = stats(tuned);
    ensure(
        tn > bn && te < be && tp > bp,
        format!("n_notes {bn:.2} -> {tn:.2}, empty_beat_rate {be:.3} -> {te:.3}, polyphony_rate {bp:.3} -> {tp:.3}"),
    )
}

fn tokenizer_round_trip() -> Check {
    let vocab = Vocab::build(VocabConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    for i in 0..500 {
        let n = rng.random_range(0..60);
        let s = common::roundtrip::quantizable_score(&mut rng, n);
        if let Err(e) = common::roundtrip::check_round_trip(&s, &vocab) {
            failures.push(format!("score {i}: {e}"));
        }
    }
    let mut violations = 0;
    for _ in 0..1000 {
        let len = rng.random_range(0..512);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab.len() as u32 + 8)).collect();
        let s = decode(&TokenSequence::from(ids), &vocab);
        if s.validate().is_err() || s.notes.iter().any(|n| n.duration < 1 || n.pitch > 127 || n.velocity == 0) {
            violations += 1;
        }
    }
    ensure(
        failures.is_empty() && violations == 0,
        format!("{} of 500 round trips out of bounds{}; fuzz violations {violations}/1000", failures.len(), failures.first().map(|f| format!(" ({f})")).unwrap_or_default()),
    )
}

fn feature_oracle() -> Check {
    let mismatched = common::seeded_scores(50, 40, 404)
        .iter()
        .filter(|s| extract_features(s) != common::oracle::oracle(s))
        .count();
    let mut chromatic = Score::empty(480);
    chromatic.notes = (0..12).map(|k| Note::new(60 + k, 80, k as u64 * 480, 480).unwrap()).collect();
    let sc = scale_consistency(&chromatic);
    ensure(mismatched == 0 && sc == 7.0 / 12.0, format!("{mismatched}/50 scores differ from the tick oracle; chromatic scale consistency {sc}"))
}

fn schedule_and_config() -> Check {
    let c = GrpoConfig::default();
    let (l0, l200) = (lr_at(0, &c), lr_at(200, &c));
    let eight = GrpoConfig { prompts_per_iter: 8, completions_per_prompt: 8, ..GrpoConfig::default() };
    ensure(
        l0 == 1e-4 && l200 == 0.0 && eight.rollouts_per_iter() == 64,
        format!("lr_at(0) = {l0:e}, lr_at(200) = {l200}, 8x8 rollouts = {}", eight.rollouts_per_iter()),
    )
}

fn remote_protocol() -> Check {
    let mut s = Score::empty(480);
    s.notes.push(Note::new(60, 90, 0, 480).unwrap());
    let wav = write_wav(&render_builtin(&s, 8000).unwrap());
    let client = |server: &MockScorerServer, timeout_ms: u64, max_retries: usize| {
        RemoteScorer::new(RemoteConfig { base_url: server.base_url(), timeout_ms, max_retries, backoff_ms: 10, ..Default::default() }).unwrap()
    };
    let body = r#"{"CE":7.48,"CU":7.76,"PC":3.94,"PQ":7.70}"#;
    let mut notes = Vec::new();

    let server = MockScorerServer::start(vec![], MockReply::ok(body)).unwrap();
    let parsed = client(&server, 2000, 0).score_wav(&wav).map_err(|e| e.to_string())?.0;
    let parse_ok = parsed
        == AestheticScores { content_enjoyment: 7.48, content_usefulness: 7.76, production_complexity: 3.94, production_quality: 7.70 };
    notes.push(format!("parse {}", if parse_ok { "ok" } else { "wrong" }));

    let slow = MockReply::Delay { ms: 3000, then: Box::new(MockReply::ok(body)) };
    let server = MockScorerServer::start(vec![], slow).unwrap();
    let started = Instant::now();
    let timed_out = matches!(client(&server, 500, 0).score_wav(&wav), Err(ScoreError::Timeout { .. }));
    let elapsed = started.elapsed().as_secs_f64() * 1000.0;
    let timeout_ok = timed_out && (400.0..=600.0).contains(&elapsed);
    notes.push(format!("500 ms timeout fired after {elapsed:.0} ms"));

    let script = vec![MockReply::status(503), MockReply::status(503), MockReply::ok(body)];
    let server = MockScorerServer::start(script, MockReply::status(500)).unwrap();
    let attempts = client(&server, 2000, 2).score_wav(&wav).map(|r| r.1).unwrap_or(0);
    let server_fail = MockScorerServer::start(vec![], MockReply::status(503)).unwrap();
    let exhausted = client(&server_fail, 2000, 3).score_wav(&wav);
    let retry_ok = attempts == 3
        && server.request_count() == 3
        && matches!(exhausted, Err(ScoreError::Status { status: 503, attempts: 4, .. }))
        && server_fail.request_count() == 4;
    notes.push(format!("503,503,200 took {attempts} attempts; 3 retries made {} requests", server_fail.request_count()));

    let mut malformed_ok = true;
    for bad in [r#"{"CE":7.48,"CU":7.76,"PC":3.94}"#, "not json", r#"{"CE":null,"CU":1,"PC":1,"PQ":1}"#] {
        let server = MockScorerServer::start(vec![], MockReply::ok(bad)).unwrap();
        malformed_ok &= matches!(client(&server, 2000, 2).score_wav(&wav), Err(ScoreError::Malformed(_)));
    }
    notes.push(format!("malformed bodies typed: {malformed_ok}"));

    ensure(parse_ok && timeout_ok && retry_ok && malformed_ok, notes.join("; "))
}

fn main() {
    let suite_started = Instant::now();
    let mut lines: Vec<(bool, String)> = Vec::new();
    let mut record = |name: &str, check: &mut dyn FnMut() -> Check| {
        let outcome = match catch_unwind(AssertUnwindSafe(|| check())) {
            Ok(r) => r,
            Err(p) => Err(format!(
                "panicked: {}",
                p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            )),
        };
        let (ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let line = format!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        println!("{line}");
        lines.push((ok, line));
    };

    record("GRPO advantage normalization", &mut grpo_math);
    record("gradient correctness (finite differences, f64)", &mut gradients);

    let desk = desk();
    record("KL estimator and anchor", &mut || kl_estimator(&desk));

    let started = Instant::now();
    let (policy_a, history_a) = tune(&desk, loop_config(50, 0.04));
    let took_a = started.elapsed();
    record("closed-loop reward ascent", &mut || reward_ascent(&desk, &history_a, took_a));

    let started = Instant::now();
    let (policy_b, history_b) = tune(&desk, loop_config(150, 0.0));
    let eval_a = evaluate(&desk, &policy_a);
    let eval_b = evaluate(&desk, &policy_b);
    let took_ab = took_a + started.elapsed();
    record("over-optimization reduces diversity", &mut || diversity_collapse(&eval_a, &eval_b, &history_b, &history_a, took_ab));

    let eval_base = evaluate(&desk, &desk.base);
    record("feature shift direction", &mut || feature_shift(&eval_base, &eval_a));

    record("tokenizer round trip and decode fuzz", &mut tokenizer_round_trip);
    record("feature oracle equivalence", &mut feature_oracle);
    record("schedule and batch-size echoes", &mut schedule_and_config);
    record("remote scorer protocol", &mut remote_protocol);

    let failed = lines.iter().filter(|(ok, _)| !ok).count();
    println!("acceptance: {} passed, {failed} failed in {:.1?}", lines.len() - failed, suite_started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
