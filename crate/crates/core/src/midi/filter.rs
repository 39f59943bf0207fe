use serde::{Deserialize, Serialize};

use super::score::{BarGrid, Score};
use super::smf::MultiTrack;

/// Zero-based GM programs 0..=7 form the piano family.
pub const PIANO_PROGRAMS: std::ops::RangeInclusive<u8> = 0..=7;
pub const MAX_NOTES_PER_BAR: usize = 300;
pub const MAX_EMPTY_BAR_RATIO: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NoPianoProgram,
    NotesPerBarExceeded,
    EmptyBarRatioExceeded,
    ParseError,
}

impl RejectReason {
    pub const ALL: [RejectReason; 4] = [
        RejectReason::NoPianoProgram,
        RejectReason::NotesPerBarExceeded,
        RejectReason::EmptyBarRatioExceeded,
        RejectReason::ParseError,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::NoPianoProgram => "no-piano-program",
            RejectReason::NotesPerBarExceeded => "notes-per-bar-exceeded",
            RejectReason::EmptyBarRatioExceeded => "empty-bar-ratio-exceeded",
            RejectReason::ParseError => "parse-error",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub accepted: bool,
    pub reason: Option<RejectReason>,
}

impl FilterReport {
    pub fn accept() -> Self {
        FilterReport {
            accepted: true,
            reason: None,
        }
    }

    pub fn reject(reason: RejectReason) -> Self {
        FilterReport {
            accepted: false,
            reason: Some(reason),
        }
    }
}

/// Keeps only piano-family parts and merges them into one deduplicated score.
pub fn filter_and_merge_piano(parsed: &MultiTrack) -> Result<Score, RejectReason> {
    let piano: Vec<_> = parsed
        .parts
        .iter()
        .filter(|p| PIANO_PROGRAMS.contains(&p.program))
        .collect();
    if piano.is_empty() {
        return Err(RejectReason::NoPianoProgram);
    }
    let notes = piano.iter().flat_map(|p| p.notes.iter().copied()).collect();
    Ok(Score::from_parts(
        parsed.ticks_per_quarter,
        notes,
        parsed.tempos.clone(),
        parsed.time_signatures.clone(),
    ))
}

/// Density and sparsity gate applied after merging.
///
/// A note counts toward the bar of its onset. The empty-bar ratio is taken over
/// bars 0 through the last bar holding an onset; a score without notes counts
/// as entirely empty.
pub fn corpus_gate(score: &Score) -> FilterReport {
    if score.notes.is_empty() {
        return FilterReport::reject(RejectReason::EmptyBarRatioExceeded);
    }
    let grid = BarGrid::new(score);
    let bars: Vec<u64> = score.notes.iter().map(|n| grid.bar_of(n.onset)).collect();
    let last_bar = *bars.iter().max().expect("non-empty") as usize;
    let mut counts = vec![0usize; last_bar + 1];
    for b in bars {
        counts[b as usize] += 1;
    }
    if counts.iter().any(|&c| c > MAX_NOTES_PER_BAR) {
        return FilterReport::reject(RejectReason::NotesPerBarExceeded);
    }
    let empty = counts.iter().filter(|&&c| c == 0).count();
    if empty as f64 / counts.len() as f64 > MAX_EMPTY_BAR_RATIO {
        return FilterReport::reject(RejectReason::EmptyBarRatioExceeded);
    }
    FilterReport::accept()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::smf::Part;
    use crate::midi::{Note, Tempo, TimeSignature};

    fn note(pitch: u8, onset: u64) -> Note {
        Note::new(pitch, 80, onset, 240).unwrap()
    }

    fn multitrack(parts: Vec<(u8, Vec<Note>)>) -> MultiTrack {
        MultiTrack {
            format: 1,
            ticks_per_quarter: 480,
            parts: parts
                .into_iter()
                .enumerate()
                .map(|(i, (program, notes))| Part {
                    track: i,
                    channel: i as u8,
                    program,
                    notes,
                })
                .collect(),
            tempos: vec![Tempo::from_bpm(0, 100.0)],
            time_signatures: vec![TimeSignature::new(0, 3, 4)],
        }
    }

    #[test]
    fn guitar_only_is_rejected() {
        // GM program 25 (1-based) is 24 zero-based.
        let mt = multitrack(vec![(24, vec![note(60, 0)])]);
        assert_eq!(filter_and_merge_piano(&mt), Err(RejectReason::NoPianoProgram));
    }

    #[test]
    fn keeps_only_piano_notes() {
        let piano: Vec<Note> = (0..3).map(|i| note(60 + i, i as u64 * 480)).collect();
        let guitar: Vec<Note> = (0..5).map(|i| note(40 + i, i as u64 * 480)).collect();
        let mt = multitrack(vec![(0, piano.clone()), (24, guitar)]);
        let score = filter_and_merge_piano(&mt).unwrap();
        assert_eq!(score.notes, piano);
        assert_eq!(score.time_signatures, vec![TimeSignature::new(0, 3, 4)]);
    }

    #[test]
    fn duplicate_notes_across_piano_tracks_merge_once() {
        let shared = note(64, 480);
        let mt = multitrack(vec![(0, vec![note(60, 0), shared]), (3, vec![shared, note(67, 960)])]);
        let score = filter_and_merge_piano(&mt).unwrap();
        assert_eq!(score.notes.len(), 3);
        assert_eq!(score.notes.iter().filter(|n| **n == shared).count(), 1);
    }

    #[test]
    fn merge_is_idempotent_on_single_piano_track() {
        let notes: Vec<Note> = (0..10).map(|i| note(50 + i, i as u64 * 120)).collect();
        let mt = multitrack(vec![(0, notes.clone())]);
        let once = filter_and_merge_piano(&mt).unwrap();
        let again = filter_and_merge_piano(&multitrack(vec![(0, once.notes.clone())])).unwrap();
        assert_eq!(once.notes, again.notes);
        assert_eq!(once.notes, notes);
    }

    #[test]
    fn dense_bar_is_rejected() {
        let mut s = Score::empty(480);
        s.notes = (0..301u64).map(|i| Note::new((i % 128) as u8, 64, 0, 1 + i).unwrap()).collect();
        s.normalize();
        assert_eq!(s.notes.len(), 301);
        assert_eq!(corpus_gate(&s), FilterReport::reject(RejectReason::NotesPerBarExceeded));
        s.notes.pop();
        assert_eq!(corpus_gate(&s), FilterReport::accept());
    }

    #[test]
    fn twenty_percent_empty_is_accepted() {
        let mut s = Score::empty(480);
        // 10 bars of 4/4, bars 3 and 6 empty.
        for bar in (0..10u64).filter(|b| *b != 3 && *b != 6) {
            s.notes.push(Note::new(60, 64, bar * 1920, 480).unwrap());
        }
        assert_eq!(corpus_gate(&s), FilterReport::accept());
        // A third empty bar tips it over.
        s.notes.retain(|n| n.onset != 1920);
        assert_eq!(corpus_gate(&s), FilterReport::reject(RejectReason::EmptyBarRatioExceeded));
    }

    #[test]
    fn gate_is_pure() {
        let mut s = Score::empty(480);
        s.notes.push(note(60, 0));
        assert_eq!(corpus_gate(&s), corpus_gate(&s));
    }
}
