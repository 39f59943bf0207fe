//! Standard MIDI File ingestion and the single-track piano [`Score`] model.

mod filter;
mod score;
mod smf;

pub use filter::{
    corpus_gate, filter_and_merge_piano, FilterReport, RejectReason, MAX_EMPTY_BAR_RATIO,
    MAX_NOTES_PER_BAR, PIANO_PROGRAMS,
};
pub use score::{BarGrid, Note, Score, Tempo, TimeSignature, DEFAULT_BPM, DEFAULT_TICKS_PER_QUARTER};
pub use smf::{parse_smf, parse_smf_tracks, write_smf, write_smf_with_program, MultiTrack, Part};

#[derive(Debug, thiserror::Error)]
pub enum MidiError {
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated track data")]
    Truncated,
    #[error("malformed track: {0}")]
    Malformed(String),
    #[error("invalid note: {0}")]
    InvalidNote(String),
    #[error("invalid score: {0}")]
    InvalidScore(String),
}
