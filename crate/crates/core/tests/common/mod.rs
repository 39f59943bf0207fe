#![allow(dead_code)]

pub mod fd;
pub mod oracle;
pub mod roundtrip;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symtune_core::midi::{Note, Score, Tempo, TimeSignature};
use symtune_core::model::{ModelConfig, ModelParams};

/// A valid score with arbitrary (unquantized) timing.
pub fn random_score(rng: &mut impl Rng, max_notes: usize) -> Score {
    let tpq = *[96u16, 120, 384, 480, 960].get(rng.random_range(0..5)).unwrap();
    let n = rng.random_range(0..=max_notes);
    let span = tpq as u64 * 32;
    let notes = (0..n)
        .map(|_| {
            Note::new(
                rng.random_range(0..128),
                rng.random_range(1..128),
                rng.random_range(0..span),
                rng.random_range(1..tpq as u64 * 6),
            )
            .unwrap()
        })
        .collect();
    let (num, den) = [(4, 4), (3, 4), (6, 8), (2, 4), (5, 4)][rng.random_range(0..5)];
    Score::from_parts(
        tpq,
        notes,
        vec![Tempo::from_bpm(0, rng.random_range(50.0..200.0))],
        vec![TimeSignature::new(0, num, den)],
    )
}

pub fn seeded_scores(n: usize, max_notes: usize, seed: u64) -> Vec<Score> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_score(&mut rng, max_notes)).collect()
}

pub fn arb_score(max_notes: usize) -> impl Strategy<Value = Score> {
    any::<u64>().prop_map(move |seed| random_score(&mut ChaCha8Rng::seed_from_u64(seed), max_notes))
}

pub fn tiny_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size,
        max_seq_len: 24,
        seed,
    }
}

/// Small random perturbation of every parameter so no symmetry hides a bug.
pub fn tiny_model_f64(vocab_size: usize, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(&tiny_config(vocab_size, seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for x in &mut p.data {
        *x += rng.random_range(-0.05..0.05);
    }
    p
}
