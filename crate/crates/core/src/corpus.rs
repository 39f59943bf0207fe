//! Corpus ingestion and a seeded synthetic piano corpus.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::midi::{
    corpus_gate, filter_and_merge_piano, parse_smf_tracks, write_smf, Note, RejectReason, Score, Tempo, TimeSignature,
};
use crate::tokenizer::{encode, TokenDataset, TokenRecord, TokenSequence, Vocab};
use crate::util::{atomic_write, mix_seed};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus directory {path}: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileOutcome {
    pub file: String,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    pub n_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub scanned: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Rejections by reason, every reason listed.
    pub by_reason: BTreeMap<String, usize>,
    pub files: Vec<FileOutcome>,
}

/// Parse, piano filter, corpus gate, encode.
pub fn ingest_bytes(bytes: &[u8], vocab: &Vocab) -> Result<TokenSequence, RejectReason> {
    let parsed = parse_smf_tracks(bytes).map_err(|_| RejectReason::ParseError)?;
    let score = filter_and_merge_piano(&parsed)?;
    let gate = corpus_gate(&score);
    if let Some(reason) = gate.reason {
        return Err(reason);
    }
    Ok(encode(&score, vocab))
}

fn is_midi(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// Every `.mid`/`.midi` file below `dir`, as sorted relative paths.
pub fn list_midi_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    fn walk(root: &Path, at: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(at)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if is_midi(&path) {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out).map_err(|source| CorpusError::Unreadable {
        path: dir.to_path_buf(),
        source,
    })?;
    out.sort();
    Ok(out)
}

/// Ingests a directory. Records and report rows follow sorted path order,
/// so identical inputs give an identical dataset.
pub fn ingest_dir(dir: &Path, vocab: &Vocab) -> Result<(TokenDataset, IngestReport), CorpusError> {
    let files = list_midi_files(dir)?;
    let results: Vec<(String, Result<TokenSequence, RejectReason>)> = files
        .par_iter()
        .map(|rel| {
            let id = rel.to_string_lossy().replace('\\', "/");
            let outcome = match std::fs::read(dir.join(rel)) {
                Ok(bytes) => ingest_bytes(&bytes, vocab),
                Err(e) => {
                    log::warn!("{id}: {e}");
                    Err(RejectReason::ParseError)
                }
            };
            (id, outcome)
        })
        .collect();

    let mut report = IngestReport {
        scanned: results.len(),
        by_reason: RejectReason::ALL.iter().map(|r| (r.as_str().to_string(), 0)).collect(),
        ..Default::default()
    };
    let mut dataset = TokenDataset::default();
    for (file, outcome) in results {
        match outcome {
            Ok(tokens) => {
                report.accepted += 1;
                report.files.push(FileOutcome {
                    file: file.clone(),
                    accepted: true,
                    reason: None,
                    n_tokens: tokens.len(),
                });
                dataset.records.push(TokenRecord { file_id: file, tokens });
            }
            Err(reason) => {
                report.rejected += 1;
                *report.by_reason.entry(reason.as_str().to_string()).or_default() += 1;
                report.files.push(FileOutcome {
                    file,
                    accepted: false,
                    reason: Some(reason),
                    n_tokens: 0,
                });
            }
        }
    }
    Ok((dataset, report))
}

/// Encodes in-memory scores as a dataset, ids `synth_NNNN`.
pub fn dataset_from_scores(scores: &[Score], vocab: &Vocab) -> TokenDataset {
    TokenDataset {
        records: scores
            .iter()
            .enumerate()
            .map(|(i, s)| TokenRecord {
                file_id: synth_name(i),
                tokens: encode(s, vocab),
            })
            .collect(),
    }
}

fn synth_name(i: usize) -> String {
    format!("synth_{i:04}.mid")
}

const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

#[derive(Debug, Clone, Copy)]
enum Texture {
    /// Single line, long notes, frequent rests.
    Sparse,
    Melody,
    /// Melody over block chords.
    Chordal,
}

/// A short diatonic piano piece drawn from `seed`. Textures range from a
/// sparse single line to melody over chords, so the corpus spans a wide
/// range of density and polyphony. Every bar holds at least one onset.
pub fn synth_score(seed: u64) -> Score {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tpq: u64 = 480;
    let (num, den) = *[(4u8, 4u8), (3, 4), (4, 4), (2, 4)].choose(&mut rng).expect("non-empty");
    let beats_per_bar = num as u64;
    let bpm = rng.random_range(72.0..144.0f64).round();
    let bars = rng.random_range(6..=10u64);
    let texture = *[Texture::Sparse, Texture::Melody, Texture::Chordal].choose(&mut rng).expect("non-empty");
    let root = rng.random_range(0..12u8);
    let scale = if rng.random_bool(0.5) { MAJOR } else { MINOR };
    let pitch_of = |degree: i32, octave: i32| -> u8 {
        let d = degree.rem_euclid(7);
        let o = octave + degree.div_euclid(7);
        (12 * o + root as i32 + scale[d as usize] as i32).clamp(21, 108) as u8
    };
    let base_vel: i32 = rng.random_range(50..100);
    let vel_spread: i32 = match texture {
        Texture::Sparse => 4,
        Texture::Melody => 12,
        Texture::Chordal => 24,
    };
    let vel = |rng: &mut ChaCha8Rng| (base_vel + rng.random_range(-vel_spread..=vel_spread)).clamp(1, 127) as u8;

    let mut notes = Vec::new();
    let mut degree: i32 = rng.random_range(0..7);
    let half = tpq / 2;
    for bar in 0..bars {
        let bar_start = bar * beats_per_bar * tpq;
        let mut wrote = false;
        for beat in 0..beats_per_bar {
            let at = bar_start + beat * tpq;
            let rest_p = match texture {
                Texture::Sparse => 0.45,
                Texture::Melody => 0.15,
                Texture::Chordal => 0.05,
            };
            let last_chance = beat + 1 == beats_per_bar && !wrote;
            if !last_chance && rng.random_bool(rest_p) {
                continue;
            }
            wrote = true;
            degree = (degree + rng.random_range(-2..=2)).clamp(-3, 10);
            match texture {
                Texture::Sparse => {
                    let dur = tpq * rng.random_range(1..=2u64);
                    notes.push(Note::new(pitch_of(degree, 5), vel(&mut rng), at, dur).expect("valid"));
                }
                Texture::Melody | Texture::Chordal => {
                    if rng.random_bool(0.4) {
                        let d2 = (degree + rng.random_range(-1..=1)).clamp(-3, 10);
                        notes.push(Note::new(pitch_of(degree, 5), vel(&mut rng), at, half).expect("valid"));
                        notes.push(Note::new(pitch_of(d2, 5), vel(&mut rng), at + half, half).expect("valid"));
                    } else {
                        notes.push(Note::new(pitch_of(degree, 5), vel(&mut rng), at, tpq).expect("valid"));
                    }
                }
            }
            if let Texture::Chordal = texture {
                if beat % 2 == 0 {
                    let chord_root = degree.rem_euclid(7) - 7;
                    for k in [0, 2, 4] {
                        let p = pitch_of(chord_root + k, 4);
                        notes.push(Note::new(p, vel(&mut rng), at, 2 * tpq).expect("valid"));
                    }
                }
            }
        }
    }
    Score::from_parts(
        tpq as u16,
        notes,
        vec![Tempo::from_bpm(0, bpm)],
        vec![TimeSignature::new(0, num, den)],
    )
}

/// `n` synthetic scores; score `i` is drawn from `mix(seed, i)`.
pub fn synth_corpus(n: usize, seed: u64) -> Vec<Score> {
    (0..n).map(|i| synth_score(mix_seed(&[seed, i as u64]))).collect()
}

/// Writes [`synth_corpus`] as `synth_NNNN.mid` files.
pub fn write_synth_corpus(dir: &Path, n: usize, seed: u64) -> Result<Vec<PathBuf>, CorpusError> {
    std::fs::create_dir_all(dir)?;
    synth_corpus(n, seed)
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(synth_name(i));
            atomic_write(&path, &write_smf(s))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::write_smf_with_program;
    use crate::tokenizer::VocabConfig;

    fn vocab() -> Vocab {
        Vocab::build(VocabConfig::default()).unwrap()
    }

    #[test]
    fn synthetic_scores_pass_the_gate() {
        for s in synth_corpus(60, 3) {
            s.validate().unwrap();
            assert!(corpus_gate(&s).accepted);
        }
        assert_eq!(synth_score(11), synth_score(11));
    }

    #[test]
    fn ingest_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        write_synth_corpus(dir.path(), 3, 0).unwrap();
        let guitar = synth_score(99);
        std::fs::write(dir.path().join("guitar.mid"), write_smf_with_program(&guitar, 24)).unwrap();
        std::fs::write(dir.path().join("junk.MID"), b"not midi").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let v = vocab();
        let (ds, report) = ingest_dir(dir.path(), &v).unwrap();
        assert_eq!(report.scanned, 5);
        assert_eq!(report.accepted, 3);
        assert_eq!(ds.len(), 3);
        assert_eq!(report.by_reason["no-piano-program"], 1);
        assert_eq!(report.by_reason["parse-error"], 1);
        let (again, _) = ingest_dir(dir.path(), &v).unwrap();
        assert_eq!(ds.to_bytes(), again.to_bytes());
    }

    #[test]
    fn missing_dir_is_an_error() {
        assert!(matches!(
            ingest_dir(Path::new("/definitely/not/here"), &vocab()),
            Err(CorpusError::Unreadable { .. })
        ));
    }
}
