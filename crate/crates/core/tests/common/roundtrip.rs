//! Quantization bounds for the tokenizer round trip.

use std::collections::BTreeSet;

use rand::Rng;
use symtune_core::midi::{Note, Score, Tempo, TimeSignature};
use symtune_core::tokenizer::{decode, encode, Vocab};

/// Notes whose quantized (onset, pitch) keys are distinct and whose pitch
/// and duration lie inside the vocabulary, so nothing merges or clamps.
pub fn quantizable_score(rng: &mut impl Rng, n: usize) -> Score {
    let tpq = [96u16, 120, 480, 960][rng.random_range(0..4)];
    let step = tpq as u64 / 8;
    let mut seen = BTreeSet::new();
    let mut notes = Vec::new();
    while notes.len() < n {
        let onset = rng.random_range(0..tpq as u64 * 40);
        let pitch = rng.random_range(21..=108u8);
        let q = (2 * onset * 8 + tpq as u64) / (2 * tpq as u64);
        if !seen.insert((q, pitch)) {
            continue;
        }
        let duration = rng.random_range(step / 2 + 1..tpq as u64 * 16);
        notes.push(Note::new(pitch, rng.random_range(1..128), onset, duration).unwrap());
    }
    let (num, den) = [(4, 4), (3, 4), (6, 8), (2, 4), (5, 4), (12, 8)][rng.random_range(0..6)];
    Score::from_parts(tpq, notes, vec![Tempo::from_bpm(0, rng.random_range(60.0..180.0))], vec![TimeSignature::new(0, num, den)])
}

fn nearest_bin(bins: &[u16], steps: f64) -> u16 {
    let mut best = bins[0];
    for &b in bins {
        if (b as f64 - steps).abs() < (best as f64 - steps).abs() {
            best = b;
        }
    }
    best
}

pub fn check_round_trip(s: &Score, v: &Vocab) -> Result<(), String> {
    let back = decode(&encode(s, v), v);
    if back.notes.len() != s.notes.len() {
        return Err(format!("note count {} -> {}", s.notes.len(), back.notes.len()));
    }
    let src_tpq = s.ticks_per_quarter as f64;
    let out_tpq = back.ticks_per_quarter as f64;
    let half_step_beats = 0.5 / 8.0;
    let half_vel_bin = 127.0 / 20.0 / 2.0;
    let mut originals: Vec<_> = s.notes.clone();
    originals.sort_by_key(|n| ((2 * n.onset * 8 + s.ticks_per_quarter as u64) / (2 * s.ticks_per_quarter as u64), n.pitch));
    for (a, b) in originals.iter().zip(&back.notes) {
        if a.pitch != b.pitch {
            return Err(format!("pitch {} -> {}", a.pitch, b.pitch));
        }
        let onset_err = (a.onset as f64 / src_tpq - b.onset as f64 / out_tpq).abs();
        if onset_err > half_step_beats + 1e-12 {
            return Err(format!("onset moved by {onset_err} beats"));
        }
        if (a.velocity as f64 - b.velocity as f64).abs() > half_vel_bin {
            return Err(format!("velocity {} -> {}", a.velocity, b.velocity));
        }
        let want = nearest_bin(v.duration_bins(), a.duration as f64 * 8.0 / src_tpq);
        let got = b.duration as f64 * 8.0 / out_tpq;
        if (got - want as f64).abs() > 1e-9 {
            return Err(format!("duration {} steps, nearest bin {want}, decoded {got}", a.duration as f64 * 8.0 / src_tpq));
        }
    }
    Ok(())
}

