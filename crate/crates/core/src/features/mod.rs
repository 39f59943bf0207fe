//! Symbolic features of generated music, averaged piano rolls and a
//! piano-roll diversity measure.

mod export;
mod roll;

use serde::{Deserialize, Serialize};

pub use export::{histogram_csv, piano_roll_csv};
pub use roll::{average_piano_roll, diversity, PianoRoll, PianoRollSummary, ROLL_BEATS, ROLL_STEPS_PER_BEAT};

use crate::midi::Score;
use crate::tokenizer::velocity_bin;

/// Grid resolution for polyphony, matching the tokenizer positions.
pub const POLYPHONY_STEPS_PER_BEAT: u64 = 8;
pub const VELOCITY_BINS: usize = 20;

const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const NATURAL_MINOR: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("no scores given")]
    EmptyList,
    #[error("need at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("grid needs positive beats and steps per beat")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub n_notes: usize,
    pub polyphony_rate: f64,
    pub empty_beat_rate: f64,
    pub pitch_histogram: Vec<u32>,
    pub pitch_range: u32,
    pub scale_consistency: f64,
    pub velocity_histogram: Vec<u32>,
    pub velocity_range: u32,
}

/// Step index containing `tick` on a grid of `steps_per_beat` per quarter.
pub(crate) fn grid_step(tick: u64, tpq: u64, steps_per_beat: u64) -> u64 {
    ((tick as u128 * steps_per_beat as u128) / tpq as u128) as u64
}

pub fn extract_features(score: &Score) -> FeatureReport {
    let n = score.notes.len();
    let mut pitch_histogram = vec![0u32; 128];
    let mut velocity_histogram = vec![0u32; VELOCITY_BINS];
    for note in &score.notes {
        pitch_histogram[note.pitch as usize] += 1;
        velocity_histogram[velocity_bin(note.velocity, VELOCITY_BINS) as usize] += 1;
    }
    let span = |f: fn(&crate::midi::Note) -> u8| -> u32 {
        match (score.notes.iter().map(f).min(), score.notes.iter().map(f).max()) {
            (Some(lo), Some(hi)) => (hi - lo) as u32,
            _ => 0,
        }
    };
    FeatureReport {
        n_notes: n,
        polyphony_rate: polyphony_rate(score),
        empty_beat_rate: empty_beat_rate(score),
        pitch_histogram,
        pitch_range: span(|n| n.pitch),
        scale_consistency: scale_consistency(score),
        velocity_histogram,
        velocity_range: span(|n| n.velocity),
    }
}

/// Fraction of active grid steps that hold two or more distinct pitches.
pub fn polyphony_rate(score: &Score) -> f64 {
    if score.notes.is_empty() {
        return 0.0;
    }
    let tpq = score.ticks_per_quarter as u64;
    let last = grid_step(score.end_tick() - 1, tpq, POLYPHONY_STEPS_PER_BEAT) as usize;
    let mut active = vec![0u128; last + 1];
    for note in &score.notes {
        let a = grid_step(note.onset, tpq, POLYPHONY_STEPS_PER_BEAT) as usize;
        let b = grid_step(note.offset() - 1, tpq, POLYPHONY_STEPS_PER_BEAT) as usize;
        for cell in &mut active[a..=b] {
            *cell |= 1u128 << note.pitch;
        }
    }
    let busy = active.iter().filter(|m| **m != 0).count();
    let poly = active.iter().filter(|m| m.count_ones() >= 2).count();
    if busy == 0 {
        0.0
    } else {
        poly as f64 / busy as f64
    }
}

/// Fraction of beats from the first onset's beat through the last sounding
/// beat that contain no onset.
pub fn empty_beat_rate(score: &Score) -> f64 {
    if score.notes.is_empty() {
        return 0.0;
    }
    let tpq = score.ticks_per_quarter as u64;
    let first = score.notes.iter().map(|n| n.onset).min().unwrap_or(0) / tpq;
    let last = (score.end_tick() - 1) / tpq;
    let mut has_onset = vec![false; (last - first + 1) as usize];
    for note in &score.notes {
        has_onset[(note.onset / tpq - first) as usize] = true;
    }
    has_onset.iter().filter(|h| !**h).count() as f64 / has_onset.len() as f64
}

/// Best fraction of notes inside one of the 12 major or 12 natural-minor
/// scales; 1.0 for an empty score.
pub fn scale_consistency(score: &Score) -> f64 {
    if score.notes.is_empty() {
        return 1.0;
    }
    let mut classes = [0usize; 12];
    for note in &score.notes {
        classes[(note.pitch % 12) as usize] += 1;
    }
    let mut best = 0;
    for root in 0..12u8 {
        for scale in [&MAJOR, &NATURAL_MINOR] {
            let inside: usize = scale.iter().map(|&d| classes[((root + d) % 12) as usize]).sum();
            best = best.max(inside);
        }
    }
    best as f64 / score.notes.len() as f64
}
