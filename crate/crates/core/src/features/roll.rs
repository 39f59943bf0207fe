use serde::{Deserialize, Serialize};

use super::{grid_step, FeatureError};
use crate::midi::Score;

pub const ROLL_BEATS: usize = 16;
pub const ROLL_STEPS_PER_BEAT: usize = 4;

/// Binary piano roll, 128 pitches by `columns` grid steps, packed into u64
/// words row by row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PianoRoll {
    pub columns: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl PianoRoll {
    pub fn new(columns: usize) -> Self {
        let words_per_row = columns.div_ceil(64);
        PianoRoll {
            columns,
            words_per_row,
            bits: vec![0; 128 * words_per_row],
        }
    }

    /// Cells where any note sounds during the step, truncated to
    /// `beats * steps_per_beat` columns from tick 0.
    pub fn from_score(score: &Score, beats: usize, steps_per_beat: usize) -> Self {
        let mut roll = PianoRoll::new(beats * steps_per_beat);
        if roll.columns == 0 {
            return roll;
        }
        let tpq = score.ticks_per_quarter as u64;
        for note in &score.notes {
            let a = grid_step(note.onset, tpq, steps_per_beat as u64) as usize;
            if a >= roll.columns {
                continue;
            }
            let b = (grid_step(note.offset() - 1, tpq, steps_per_beat as u64) as usize).min(roll.columns - 1);
            for c in a..=b {
                roll.set(note.pitch as usize, c);
            }
        }
        roll
    }

    pub fn set(&mut self, pitch: usize, column: usize) {
        assert!(pitch < 128 && column < self.columns);
        self.bits[pitch * self.words_per_row + column / 64] |= 1u64 << (column % 64);
    }

    pub fn get(&self, pitch: usize, column: usize) -> bool {
        self.bits[pitch * self.words_per_row + column / 64] >> (column % 64) & 1 == 1
    }

    pub fn cells(&self) -> usize {
        128 * self.columns
    }

    pub fn active_cells(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of cells where the two rolls disagree.
    pub fn hamming(&self, other: &PianoRoll) -> usize {
        assert_eq!(self.columns, other.columns, "roll widths differ");
        self.bits.iter().zip(&other.bits).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PianoRollSummary {
    pub columns: usize,
    /// Row-major `128 × columns`: fraction of scores active in each cell.
    pub matrix: Vec<f64>,
    pub sample_count: usize,
}

impl PianoRollSummary {
    pub fn cell(&self, pitch: usize, column: usize) -> f64 {
        self.matrix[pitch * self.columns + column]
    }
}

pub fn average_piano_roll(scores: &[Score], beats: usize, steps_per_beat: usize) -> Result<PianoRollSummary, FeatureError> {
    if scores.is_empty() {
        return Err(FeatureError::EmptyList);
    }
    if beats == 0 || steps_per_beat == 0 {
        return Err(FeatureError::EmptyGrid);
    }
    let columns = beats * steps_per_beat;
    let mut counts = vec![0usize; 128 * columns];
    for s in scores {
        let roll = PianoRoll::from_score(s, beats, steps_per_beat);
        for p in 0..128 {
            for c in 0..columns {
                if roll.get(p, c) {
                    counts[p * columns + c] += 1;
                }
            }
        }
    }
    let n = scores.len() as f64;
    Ok(PianoRollSummary {
        columns,
        matrix: counts.into_iter().map(|c| c as f64 / n).collect(),
        sample_count: scores.len(),
    })
}

/// Mean pairwise normalized Hamming distance between binarized rolls.
pub fn diversity(scores: &[Score], beats: usize, steps_per_beat: usize) -> Result<f64, FeatureError> {
    if scores.len() < 2 {
        return Err(FeatureError::TooFewScores(scores.len()));
    }
    if beats == 0 || steps_per_beat == 0 {
        return Err(FeatureError::EmptyGrid);
    }
    let rolls: Vec<PianoRoll> = scores.iter().map(|s| PianoRoll::from_score(s, beats, steps_per_beat)).collect();
    let cells = rolls[0].cells() as f64;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..rolls.len() {
        for j in i + 1..rolls.len() {
            total += rolls[i].hamming(&rolls[j]) as f64 / cells;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::Note;

    fn single(pitch: u8, onset: u64, dur: u64) -> Score {
        let mut s = Score::empty(480);
        s.notes.push(Note::new(pitch, 90, onset, dur).unwrap());
        s
    }

    #[test]
    fn two_disjoint_notes_average_to_half() {
        let a = single(60, 0, 120);
        let b = single(72, 480, 120);
        let sum = average_piano_roll(&[a, b], 16, 4).unwrap();
        let halves = sum.matrix.iter().filter(|&&x| x == 0.5).count();
        assert_eq!(halves, 2);
        assert_eq!(sum.cell(60, 0), 0.5);
        assert_eq!(sum.cell(72, 4), 0.5);
        assert_eq!(sum.matrix.iter().filter(|&&x| x != 0.0).count(), 2);
    }

    #[test]
    fn duplicated_list_same_summary() {
        let a = single(60, 0, 960);
        let one = average_piano_roll(std::slice::from_ref(&a), 16, 4).unwrap();
        let two = average_piano_roll(&[a.clone(), a], 16, 4).unwrap();
        assert_eq!(one.matrix, two.matrix);
    }

    #[test]
    fn diversity_extremes() {
        let a = single(60, 0, 960);
        assert_eq!(diversity(&[a.clone(), a.clone()], 16, 4).unwrap(), 0.0);
        let mut full = Score::empty(480);
        for p in 0..128u8 {
            full.notes.push(Note::new(p, 90, 0, 480 * 16).unwrap());
        }
        assert_eq!(diversity(&[Score::empty(480), full], 16, 4).unwrap(), 1.0);
        assert_eq!(diversity(&[a], 16, 4), Err(FeatureError::TooFewScores(1)));
    }

    #[test]
    fn notes_past_horizon_truncated() {
        let roll = PianoRoll::from_score(&single(60, 480 * 20, 480), 16, 4);
        assert_eq!(roll.active_cells(), 0);
        let long = PianoRoll::from_score(&single(60, 0, 480 * 40), 16, 4);
        assert_eq!(long.active_cells(), 64);
    }
}
