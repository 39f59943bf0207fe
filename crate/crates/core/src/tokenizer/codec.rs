//! Score <-> token stream conversion and training crops.

use rand::Rng;

use super::vocab::{Token, Vocab, PAD_ID};
use super::TokenSequence;
use crate::midi::{Note, Score, Tempo, TimeSignature};

/// Nearest grid step for a tick, rounding half up.
fn step_of(tick: u64, tpq: u64, ppb: u64) -> u64 {
    (2 * tick * ppb + tpq) / (2 * tpq)
}

/// A note after quantization, in grid steps and bin indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct QuantizedNote {
    pub onset_step: u64,
    pub pitch: u8,
    pub velocity_bin: u8,
    pub duration_steps: u16,
}

/// The grid/bin projection applied by `encode`; `decode(encode(s))` holds
/// exactly these notes.
pub fn quantize(score: &Score, vocab: &Vocab) -> Vec<QuantizedNote> {
    let tpq = score.ticks_per_quarter.max(1) as u64;
    let ppb = vocab.config().positions_per_beat as u64;
    let mut q: Vec<QuantizedNote> = score
        .notes
        .iter()
        .map(|n| QuantizedNote {
            onset_step: step_of(n.onset, tpq, ppb),
            pitch: vocab.clamp_pitch(n.pitch),
            velocity_bin: vocab.velocity_bin(n.velocity),
            duration_steps: vocab.duration_bin(n.duration as f64 * ppb as f64 / tpq as f64),
        })
        .collect();
    q.sort();
    q
}

/// Encodes a score as `BOS` followed by bars. Each bar is `Bar`, a `TimeSig`
/// when the meter changes (always in the first bar), a `Tempo` when the tempo
/// bin changes (always in the first bar), then `Position Pitch Velocity
/// Duration` per note.
///
/// Meter and tempo changes take effect at the first bar starting at or after
/// their (quantized) position, so every bar is full length.
pub fn encode(score: &Score, vocab: &Vocab) -> TokenSequence {
    let tpq = score.ticks_per_quarter.max(1) as u64;
    let ppb = vocab.config().positions_per_beat as u64;
    let notes = quantize(score, vocab);

    let mut meters: Vec<(u64, (u8, u8))> = score
        .time_signatures
        .iter()
        .filter(|ts| ts.is_valid())
        .map(|ts| {
            (
                step_of(ts.tick, tpq, ppb),
                vocab.supported_time_signature(ts.numerator, ts.denominator),
            )
        })
        .collect();
    meters.sort_by_key(|m| m.0);
    let mut tempos: Vec<(u64, u8)> = score
        .tempos
        .iter()
        .map(|t| (step_of(t.tick, tpq, ppb), vocab.tempo_bin(t.bpm())))
        .collect();
    tempos.sort_by_key(|t| t.0);

    fn in_effect<V>(events: &[(u64, V)], at: u64) -> Option<usize> {
        events.iter().rposition(|e| e.0 <= at)
    }
    let default_meter = vocab.supported_time_signature(4, 4);
    let default_tempo = vocab.tempo_bin(crate::midi::DEFAULT_BPM);

    let last_onset = notes.last().map(|n| n.onset_step);
    let mut ids = vec![vocab.id_of(Token::Bos)];
    let mut bar_start = 0u64;
    let mut emitted_meter: Option<(u8, u8)> = None;
    let mut emitted_tempo: Option<u8> = None;
    let mut next_note = 0usize;
    loop {
        let meter = in_effect(&meters, bar_start).map_or(default_meter, |i| meters[i].1);
        let tempo = in_effect(&tempos, bar_start).map_or(default_tempo, |i| tempos[i].1);
        let bar_len = vocab.bar_steps(meter.0, meter.1);

        ids.push(vocab.id_of(Token::Bar));
        if emitted_meter != Some(meter) {
            ids.push(vocab.id_of(Token::TimeSig(meter.0, meter.1)));
            emitted_meter = Some(meter);
        }
        if emitted_tempo != Some(tempo) {
            ids.push(vocab.id_of(Token::Tempo(tempo)));
            emitted_tempo = Some(tempo);
        }
        while next_note < notes.len() && notes[next_note].onset_step < bar_start + bar_len {
            let n = notes[next_note];
            ids.push(vocab.id_of(Token::Position((n.onset_step - bar_start) as u16)));
            ids.push(vocab.id_of(Token::Pitch(n.pitch)));
            ids.push(vocab.id_of(Token::Velocity(n.velocity_bin)));
            ids.push(vocab.id_of(Token::Duration(n.duration_steps)));
            next_note += 1;
        }
        bar_start += bar_len;
        match last_onset {
            Some(last) if bar_start <= last => {}
            _ => break,
        }
    }
    TokenSequence::from(ids)
}

#[derive(Default)]
enum Pending {
    #[default]
    None,
    Pitch(u8),
    PitchVelocity(u8, u8),
}

/// Best-effort inverse of [`encode`] for arbitrary id sequences.
///
/// Out-of-vocabulary ids, `PAD`, `BOS` and tokens arriving out of order are
/// skipped; a `Pitch` not immediately followed by `Velocity` and `Duration`
/// is dropped. Tokens before the first `Bar` belong to bar 0.
pub fn decode(tokens: &TokenSequence, vocab: &Vocab) -> Score {
    let cfg = vocab.config();
    let tpq = cfg.decode_ticks_per_quarter;
    let ticks_per_step = tpq as u64 / cfg.positions_per_beat as u64;
    let to_ticks = |steps: u64| -> u64 {
        // Exact when the decode resolution is a multiple of the grid.
        if tpq as u64 % cfg.positions_per_beat as u64 == 0 {
            steps * ticks_per_step
        } else {
            (steps as f64 * tpq as f64 / cfg.positions_per_beat as f64).round() as u64
        }
    };

    let mut notes: Vec<Note> = Vec::new();
    let mut tempos: Vec<Tempo> = Vec::new();
    let mut sigs: Vec<TimeSignature> = Vec::new();
    let mut bar_start: Option<u64> = None;
    let mut bar_len = vocab.bar_steps(4, 4);
    let mut position = 0u64;
    let mut pending = Pending::None;

    for &id in tokens.ids() {
        let Some(token) = vocab.token(id) else {
            pending = Pending::None;
            continue;
        };
        match (std::mem::take(&mut pending), token) {
            (Pending::Pitch(p), Token::Velocity(v)) => {
                pending = Pending::PitchVelocity(p, v);
                continue;
            }
            (Pending::PitchVelocity(p, v), Token::Duration(d)) => {
                let start = bar_start.unwrap_or(0) + position;
                notes.push(Note {
                    onset: to_ticks(start),
                    pitch: p,
                    duration: to_ticks(d as u64).max(1),
                    velocity: vocab.velocity_value(v),
                });
                continue;
            }
            _ => {}
        }
        match token {
            Token::Bar => {
                bar_start = Some(bar_start.map_or(0, |s| s + bar_len));
                position = 0;
            }
            Token::TimeSig(n, d) => {
                bar_len = vocab.bar_steps(n, d);
                sigs.push(TimeSignature::new(to_ticks(*bar_start.get_or_insert(0)), n, d));
            }
            Token::Tempo(b) => {
                tempos.push(Tempo::from_bpm(to_ticks(*bar_start.get_or_insert(0)), vocab.tempo_value(b)));
            }
            Token::Position(p) => {
                bar_start.get_or_insert(0);
                position = p as u64;
            }
            Token::Pitch(p) => pending = Pending::Pitch(p),
            Token::Pad | Token::Bos | Token::Velocity(_) | Token::Duration(_) => {}
        }
    }
    Score::from_parts(tpq, notes, tempos, sigs)
}

/// A contiguous window of at most `max_len` tokens at a uniform offset,
/// right-padded with `PAD` to exactly `max_len`.
pub fn random_crop<R: Rng + ?Sized>(tokens: &TokenSequence, max_len: usize, rng: &mut R) -> TokenSequence {
    assert!(max_len >= 1, "max_len must be at least 1");
    let ids = tokens.ids();
    let take = ids.len().min(max_len);
    let offset = if ids.len() > take {
        rng.random_range(0..=ids.len() - take)
    } else {
        0
    };
    let mut out = Vec::with_capacity(max_len);
    out.extend_from_slice(&ids[offset..offset + take]);
    out.resize(max_len, PAD_ID);
    TokenSequence::from(out)
}
