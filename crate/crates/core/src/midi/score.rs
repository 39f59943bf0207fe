use serde::{Deserialize, Serialize};

use super::MidiError;

pub const DEFAULT_TICKS_PER_QUARTER: u16 = 480;
pub const DEFAULT_BPM: f64 = 120.0;

/// A single sounding note. Times are in ticks of the owning [`Score`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Note {
    pub onset: u64,
    pub pitch: u8,
    pub duration: u64,
    pub velocity: u8,
}

impl Note {
    pub fn new(pitch: u8, velocity: u8, onset: u64, duration: u64) -> Result<Self, MidiError> {
        let note = Note {
            onset,
            pitch,
            duration,
            velocity,
        };
        note.validate()?;
        Ok(note)
    }

    pub fn offset(&self) -> u64 {
        self.onset + self.duration
    }

    pub fn validate(&self) -> Result<(), MidiError> {
        if self.pitch > 127 {
            return Err(MidiError::InvalidNote(format!("pitch {} > 127", self.pitch)));
        }
        if !(1..=127).contains(&self.velocity) {
            return Err(MidiError::InvalidNote(format!(
                "velocity {} outside 1..=127",
                self.velocity
            )));
        }
        if self.duration == 0 {
            return Err(MidiError::InvalidNote("zero duration".into()));
        }
        Ok(())
    }
}

/// Tempo change, stored the way SMF stores it so that write/parse is lossless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tempo {
    pub tick: u64,
    pub micros_per_quarter: u32,
}

impl Tempo {
    pub fn from_bpm(tick: u64, bpm: f64) -> Self {
        let us = (60_000_000.0 / bpm).round().clamp(1.0, 0xFF_FFFF as f64) as u32;
        Tempo {
            tick,
            micros_per_quarter: us,
        }
    }

    pub fn bpm(&self) -> f64 {
        60_000_000.0 / self.micros_per_quarter as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u8,
}

impl TimeSignature {
    pub fn new(tick: u64, numerator: u8, denominator: u8) -> Self {
        TimeSignature {
            tick,
            numerator,
            denominator,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.numerator >= 1 && self.denominator.is_power_of_two()
    }
}

/// Symbolic music: a single merged note list with its tempo and meter maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub ticks_per_quarter: u16,
    pub notes: Vec<Note>,
    pub tempos: Vec<Tempo>,
    pub time_signatures: Vec<TimeSignature>,
}

impl Default for Score {
    fn default() -> Self {
        Score::empty(DEFAULT_TICKS_PER_QUARTER)
    }
}

impl Score {
    /// An empty score with default 120 bpm and 4/4 at tick 0.
    pub fn empty(ticks_per_quarter: u16) -> Self {
        Score {
            ticks_per_quarter,
            notes: Vec::new(),
            tempos: vec![Tempo::from_bpm(0, DEFAULT_BPM)],
            time_signatures: vec![TimeSignature::new(0, 4, 4)],
        }
    }

    pub fn from_parts(
        ticks_per_quarter: u16,
        notes: Vec<Note>,
        tempos: Vec<Tempo>,
        time_signatures: Vec<TimeSignature>,
    ) -> Self {
        let mut score = Score {
            ticks_per_quarter,
            notes,
            tempos,
            time_signatures,
        };
        score.normalize();
        score
    }

    /// Restores the score invariants: notes sorted by (onset, pitch), duplicate
    /// (onset, pitch, duration) notes removed, one tempo and one meter at tick 0.
    pub fn normalize(&mut self) {
        self.notes.sort();
        self.notes
            .dedup_by(|b, a| a.onset == b.onset && a.pitch == b.pitch && a.duration == b.duration);

        // Stable sort keeps file order among same-tick events; the last one wins.
        self.tempos.sort_by_key(|t| t.tick);
        dedup_keep_last(&mut self.tempos, |t| t.tick);
        if self.tempos.first().map_or(true, |t| t.tick > 0) {
            self.tempos.insert(0, Tempo::from_bpm(0, DEFAULT_BPM));
        }

        self.time_signatures.retain(TimeSignature::is_valid);
        self.time_signatures.sort_by_key(|t| t.tick);
        dedup_keep_last(&mut self.time_signatures, |t| t.tick);
        if self.time_signatures.first().map_or(true, |t| t.tick > 0) {
            self.time_signatures.insert(0, TimeSignature::new(0, 4, 4));
        }
    }

    pub fn validate(&self) -> Result<(), MidiError> {
        if self.ticks_per_quarter == 0 {
            return Err(MidiError::InvalidScore("ticks_per_quarter is zero".into()));
        }
        for n in &self.notes {
            n.validate()?;
        }
        if self.notes.windows(2).any(|w| w[0] > w[1]) {
            return Err(MidiError::InvalidScore("notes not sorted".into()));
        }
        if self
            .notes
            .windows(2)
            .any(|w| w[0].onset == w[1].onset && w[0].pitch == w[1].pitch && w[0].duration == w[1].duration)
        {
            return Err(MidiError::InvalidScore("duplicate note".into()));
        }
        match self.tempos.first() {
            Some(t) if t.tick == 0 => {}
            _ => return Err(MidiError::InvalidScore("no tempo at tick 0".into())),
        }
        if self.tempos.iter().any(|t| t.micros_per_quarter == 0) {
            return Err(MidiError::InvalidScore("zero tempo".into()));
        }
        match self.time_signatures.first() {
            Some(t) if t.tick == 0 => {}
            _ => return Err(MidiError::InvalidScore("no time signature at tick 0".into())),
        }
        if !self.time_signatures.iter().all(TimeSignature::is_valid) {
            return Err(MidiError::InvalidScore("invalid time signature".into()));
        }
        Ok(())
    }

    /// Tick one past the last sounding tick; 0 for an empty score.
    pub fn end_tick(&self) -> u64 {
        self.notes.iter().map(Note::offset).max().unwrap_or(0)
    }

    /// Converts a tick position into seconds under the tempo map.
    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let tpq = self.ticks_per_quarter as f64;
        let mut seconds = 0.0;
        let mut last_tick = 0u64;
        let mut us_per_quarter = self
            .tempos
            .first()
            .map_or(500_000.0, |t| t.micros_per_quarter as f64);
        for t in &self.tempos {
            if t.tick >= tick {
                break;
            }
            seconds += (t.tick - last_tick) as f64 * us_per_quarter / tpq / 1e6;
            last_tick = t.tick;
            us_per_quarter = t.micros_per_quarter as f64;
        }
        seconds + (tick - last_tick) as f64 * us_per_quarter / tpq / 1e6
    }

    pub fn tempo_at(&self, tick: u64) -> Tempo {
        self.tempos
            .iter()
            .take_while(|t| t.tick <= tick)
            .last()
            .copied()
            .unwrap_or_else(|| Tempo::from_bpm(0, DEFAULT_BPM))
    }
}

fn dedup_keep_last<T, K: PartialEq>(v: &mut Vec<T>, key: impl Fn(&T) -> K) {
    let mut out: Vec<T> = Vec::with_capacity(v.len());
    for item in v.drain(..) {
        if let Some(last) = out.last_mut() {
            if key(last) == key(&item) {
                *last = item;
                continue;
            }
        }
        out.push(item);
    }
    *v = out;
}

/// Bar layout derived from a meter map. A meter change always opens a new bar,
/// even when the previous bar is incomplete.
///
/// All arithmetic is exact: a bar spans `numerator * 4 * tpq / denominator`
/// ticks, which need not be an integer.
#[derive(Debug, Clone)]
pub struct BarGrid {
    tpq: u64,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: u64,
    first_bar: u64,
    numerator: u64,
    denominator: u64,
}

impl Segment {
    /// Bar index within this segment for a tick at or after `start`.
    fn local_bar(&self, tick: u64, tpq: u64) -> u64 {
        (tick - self.start) * self.denominator / (self.numerator * 4 * tpq)
    }

    /// Number of (possibly truncated) bars needed to reach `end`.
    fn bars_until(&self, end: u64, tpq: u64) -> u64 {
        let span = (end - self.start) * self.denominator;
        let bar = self.numerator * 4 * tpq;
        span.div_ceil(bar)
    }
}

impl BarGrid {
    pub fn new(score: &Score) -> Self {
        let tpq = score.ticks_per_quarter.max(1) as u64;
        let mut sigs: Vec<TimeSignature> = score
            .time_signatures
            .iter()
            .copied()
            .filter(TimeSignature::is_valid)
            .collect();
        if sigs.first().map_or(true, |t| t.tick > 0) {
            sigs.insert(0, TimeSignature::new(0, 4, 4));
        }
        let mut segments: Vec<Segment> = Vec::with_capacity(sigs.len());
        for ts in sigs {
            let first_bar = match segments.last() {
                Some(prev) if ts.tick == prev.start => {
                    segments.pop();
                    segments.last().map_or(0, |p| p.first_bar + p.bars_until(ts.tick, tpq))
                }
                Some(prev) => prev.first_bar + prev.bars_until(ts.tick, tpq),
                None => 0,
            };
            segments.push(Segment {
                start: ts.tick,
                first_bar,
                numerator: ts.numerator as u64,
                denominator: ts.denominator as u64,
            });
        }
        BarGrid { tpq, segments }
    }

    pub fn bar_of(&self, tick: u64) -> u64 {
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| s.start <= tick)
            .expect("segment at tick 0");
        seg.first_bar + seg.local_bar(tick, self.tpq)
    }
}
