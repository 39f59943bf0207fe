use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TokenizerError;

/// Tokenizer layout. Everything that affects id assignment lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub pitch_min: u8,
    pub pitch_max: u8,
    pub time_signatures: Vec<(u8, u8)>,
    pub tempo_bins: usize,
    pub tempo_min_bpm: f64,
    pub tempo_max_bpm: f64,
    /// Position grid resolution, subdivisions of a quarter note.
    pub positions_per_beat: u32,
    pub velocity_bins: usize,
    /// Durations are every grid step up to this many beats...
    pub fine_duration_beats: u32,
    /// ...then whole beats up to this many.
    pub max_duration_beats: u32,
    /// Resolution of scores produced by `decode`.
    pub decode_ticks_per_quarter: u16,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            pitch_min: 21,
            pitch_max: 108,
            time_signatures: vec![
                (1, 4),
                (2, 4),
                (3, 4),
                (4, 4),
                (5, 4),
                (6, 4),
                (3, 8),
                (6, 8),
                (9, 8),
                (12, 8),
            ],
            tempo_bins: 32,
            tempo_min_bpm: 40.0,
            tempo_max_bpm: 250.0,
            positions_per_beat: 8,
            velocity_bins: 20,
            fine_duration_beats: 4,
            max_duration_beats: 16,
            decode_ticks_per_quarter: 480,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Pad,
    Bos,
    Bar,
    TimeSig(u8, u8),
    /// Tempo bin index.
    Tempo(u8),
    /// Grid steps from the bar start.
    Position(u16),
    Pitch(u8),
    /// Velocity bin index.
    Velocity(u8),
    /// Length in grid steps.
    Duration(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Pad,
    Bos,
    Bar,
    TimeSig,
    Tempo,
    Position,
    Pitch,
    Velocity,
    Duration,
}

impl Token {
    pub fn kind(&self) -> TokenKind {
        match self {
            Token::Pad => TokenKind::Pad,
            Token::Bos => TokenKind::Bos,
            Token::Bar => TokenKind::Bar,
            Token::TimeSig(..) => TokenKind::TimeSig,
            Token::Tempo(_) => TokenKind::Tempo,
            Token::Position(_) => TokenKind::Position,
            Token::Pitch(_) => TokenKind::Pitch,
            Token::Velocity(_) => TokenKind::Velocity,
            Token::Duration(_) => TokenKind::Duration,
        }
    }

    pub fn parse(s: &str) -> Option<Token> {
        match s {
            "PAD" => return Some(Token::Pad),
            "BOS" => return Some(Token::Bos),
            "Bar" => return Some(Token::Bar),
            _ => {}
        }
        let (kind, value) = s.split_once('_')?;
        Some(match kind {
            "TimeSig" => {
                let (n, d) = value.split_once('/')?;
                Token::TimeSig(n.parse().ok()?, d.parse().ok()?)
            }
            "Tempo" => Token::Tempo(value.parse().ok()?),
            "Position" => Token::Position(value.parse().ok()?),
            "Pitch" => Token::Pitch(value.parse().ok()?),
            "Velocity" => Token::Velocity(value.parse().ok()?),
            "Duration" => Token::Duration(value.parse().ok()?),
            _ => return None,
        })
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Pad => f.write_str("PAD"),
            Token::Bos => f.write_str("BOS"),
            Token::Bar => f.write_str("Bar"),
            Token::TimeSig(n, d) => write!(f, "TimeSig_{n}/{d}"),
            Token::Tempo(b) => write!(f, "Tempo_{b}"),
            Token::Position(p) => write!(f, "Position_{p}"),
            Token::Pitch(p) => write!(f, "Pitch_{p}"),
            Token::Velocity(b) => write!(f, "Velocity_{b}"),
            Token::Duration(d) => write!(f, "Duration_{d}"),
        }
    }
}

/// Bidirectional token/id mapping. `PAD` is always id 0.
#[derive(Debug, Clone)]
pub struct Vocab {
    config: VocabConfig,
    tokens: Vec<Token>,
    ids: HashMap<Token, u32>,
    tempo_values: Vec<f64>,
    duration_steps: Vec<u16>,
}

pub const PAD_ID: u32 = 0;

impl Vocab {
    pub fn build(config: VocabConfig) -> Result<Self, TokenizerError> {
        let empty = |what: &str| Err(TokenizerError::EmptyRange(what.to_string()));
        if config.pitch_min > config.pitch_max || config.pitch_max > 127 {
            return empty("pitch");
        }
        if config.time_signatures.is_empty() {
            return empty("time signatures");
        }
        if config.tempo_bins == 0
            || config.tempo_bins > 256
            || !(config.tempo_min_bpm > 0.0 && config.tempo_max_bpm >= config.tempo_min_bpm)
        {
            return empty("tempo");
        }
        if config.positions_per_beat == 0 {
            return empty("positions");
        }
        if config.velocity_bins == 0 || config.velocity_bins > 127 {
            return empty("velocity");
        }
        if config.fine_duration_beats == 0 || config.max_duration_beats < config.fine_duration_beats {
            return empty("duration");
        }
        if config.decode_ticks_per_quarter == 0 {
            return empty("decode resolution");
        }
        let ppb = config.positions_per_beat;
        let mut max_bar_steps = 0u32;
        for &(n, d) in &config.time_signatures {
            if n == 0 || !d.is_power_of_two() || (n as u32 * 4 * ppb) % d as u32 != 0 {
                return Err(TokenizerError::InvalidConfig(format!(
                    "time signature {n}/{d} does not fit the position grid"
                )));
            }
            max_bar_steps = max_bar_steps.max(n as u32 * 4 * ppb / d as u32);
        }

        let mut tokens = vec![Token::Pad, Token::Bos, Token::Bar];
        tokens.extend(config.time_signatures.iter().map(|&(n, d)| Token::TimeSig(n, d)));
        tokens.extend((0..config.tempo_bins).map(|b| Token::Tempo(b as u8)));
        tokens.extend((0..max_bar_steps).map(|p| Token::Position(p as u16)));
        tokens.extend((config.pitch_min..=config.pitch_max).map(Token::Pitch));
        tokens.extend((0..config.velocity_bins).map(|b| Token::Velocity(b as u8)));

        let mut duration_steps: Vec<u16> = (1..=config.fine_duration_beats * ppb).map(|s| s as u16).collect();
        duration_steps.extend(
            (config.fine_duration_beats + 1..=config.max_duration_beats).map(|b| (b * ppb) as u16),
        );
        tokens.extend(duration_steps.iter().map(|&s| Token::Duration(s)));

        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(*t, i as u32).is_some() {
                return Err(TokenizerError::InvalidConfig(format!("duplicate token {t}")));
            }
        }

        let n = config.tempo_bins;
        let (lo, hi) = (config.tempo_min_bpm.ln(), config.tempo_max_bpm.ln());
        let tempo_values = (0..n)
            .map(|i| {
                if n == 1 {
                    config.tempo_min_bpm
                } else {
                    (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()
                }
            })
            .collect();

        Ok(Vocab {
            config,
            tokens,
            ids,
            tempo_values,
            duration_steps,
        })
    }

    pub fn config(&self) -> &VocabConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<Token> {
        self.tokens.get(id as usize).copied()
    }

    pub fn id(&self, token: Token) -> Option<u32> {
        self.ids.get(&token).copied()
    }

    /// Id of a token known to be in the vocabulary.
    pub(crate) fn id_of(&self, token: Token) -> u32 {
        self.ids[&token]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token_strings(&self) -> Vec<String> {
        self.tokens.iter().map(Token::to_string).collect()
    }

    pub fn ids_of_kind(&self, kind: TokenKind) -> Vec<u32> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind() == kind)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn ticks_per_step(&self, ticks_per_quarter: u16) -> f64 {
        ticks_per_quarter as f64 / self.config.positions_per_beat as f64
    }

    pub fn bar_steps(&self, numerator: u8, denominator: u8) -> u64 {
        numerator as u64 * 4 * self.config.positions_per_beat as u64 / denominator as u64
    }

    /// Maps any meter onto a supported one: exact match first, otherwise the
    /// supported meter with the closest bar length (ties go to the first listed).
    pub fn supported_time_signature(&self, numerator: u8, denominator: u8) -> (u8, u8) {
        let sigs = &self.config.time_signatures;
        if sigs.contains(&(numerator, denominator)) {
            return (numerator, denominator);
        }
        let target = numerator as f64 * 4.0 / denominator.max(1) as f64;
        let mut best = sigs[0];
        let mut best_err = f64::INFINITY;
        for &(n, d) in sigs {
            let err = (n as f64 * 4.0 / d as f64 - target).abs();
            if err < best_err {
                best_err = err;
                best = (n, d);
            }
        }
        best
    }

    pub fn tempo_bin(&self, bpm: f64) -> u8 {
        let n = self.config.tempo_bins;
        if n == 1 {
            return 0;
        }
        let (lo, hi) = (self.config.tempo_min_bpm.ln(), self.config.tempo_max_bpm.ln());
        let x = (bpm.max(1e-9).ln() - lo) / (hi - lo) * (n - 1) as f64;
        x.round().clamp(0.0, (n - 1) as f64) as u8
    }

    pub fn tempo_value(&self, bin: u8) -> f64 {
        self.tempo_values[bin as usize]
    }

    /// `floor((v - 1) * bins / 127)`, clamped to the last bin.
    pub fn velocity_bin(&self, velocity: u8) -> u8 {
        velocity_bin(velocity, self.config.velocity_bins)
    }

    /// Midpoint of a velocity bin, rounded to an integer MIDI velocity.
    pub fn velocity_value(&self, bin: u8) -> u8 {
        let width = 127.0 / self.config.velocity_bins as f64;
        (1.0 + (bin as f64 + 0.5) * width).round().clamp(1.0, 127.0) as u8
    }

    pub fn duration_bins(&self) -> &[u16] {
        &self.duration_steps
    }

    /// Nearest duration bin for a length in (fractional) grid steps; ties pick
    /// the shorter bin.
    pub fn duration_bin(&self, steps: f64) -> u16 {
        let mut best = self.duration_steps[0];
        let mut best_err = f64::INFINITY;
        for &b in &self.duration_steps {
            let err = (b as f64 - steps).abs();
            if err < best_err {
                best_err = err;
                best = b;
            }
        }
        best
    }

    pub fn clamp_pitch(&self, pitch: u8) -> u8 {
        pitch.clamp(self.config.pitch_min, self.config.pitch_max)
    }
}

pub fn velocity_bin(velocity: u8, bins: usize) -> u8 {
    let v = velocity.max(1) as usize;
    (((v - 1) * bins) / 127).min(bins - 1) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocab_shape() {
        let v = Vocab::build(VocabConfig::default()).unwrap();
        assert_eq!(v.token(0), Some(Token::Pad));
        assert_eq!(v.ids_of_kind(TokenKind::Velocity).len(), 20);
        let pitches: Vec<Token> = v.ids_of_kind(TokenKind::Pitch).iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(pitches.len(), 88);
        assert_eq!(pitches.first(), Some(&Token::Pitch(21)));
        assert_eq!(pitches.last(), Some(&Token::Pitch(108)));
        assert_eq!(v.ids_of_kind(TokenKind::Tempo).len(), 32);
        assert_eq!(v.ids_of_kind(TokenKind::TimeSig).len(), 10);
        // 12/8 spans six beats of eight steps.
        assert_eq!(v.ids_of_kind(TokenKind::Position).len(), 48);
        // 32 fine steps plus beats 5..=16.
        assert_eq!(v.duration_bins().len(), 44);
    }

    #[test]
    fn build_is_deterministic() {
        let a = Vocab::build(VocabConfig::default()).unwrap();
        let b = Vocab::build(VocabConfig::default()).unwrap();
        assert_eq!(a.tokens(), b.tokens());
    }

    #[test]
    fn string_form_round_trips() {
        let v = Vocab::build(VocabConfig::default()).unwrap();
        for (i, s) in v.token_strings().iter().enumerate() {
            assert_eq!(v.id(Token::parse(s).unwrap()), Some(i as u32));
        }
    }

    #[test]
    fn velocity_bins_span_full_range() {
        let v = Vocab::build(VocabConfig::default()).unwrap();
        assert_eq!(v.velocity_bin(1), 0);
        assert_eq!(v.velocity_bin(127), 19);
        for vel in 1..=127u8 {
            let b = v.velocity_bin(vel);
            assert_eq!(b as usize, (vel as usize - 1) * 20 / 127);
            assert_eq!(v.velocity_bin(v.velocity_value(b)), b);
        }
    }

    #[test]
    fn tempo_bins_are_log_spaced() {
        let v = Vocab::build(VocabConfig::default()).unwrap();
        assert!((v.tempo_value(0) - 40.0).abs() < 1e-9);
        assert!((v.tempo_value(31) - 250.0).abs() < 1e-9);
        let r0 = v.tempo_value(1) / v.tempo_value(0);
        let r1 = v.tempo_value(31) / v.tempo_value(30);
        assert!((r0 - r1).abs() < 1e-12);
        assert_eq!(v.tempo_bin(10.0), 0);
        assert_eq!(v.tempo_bin(1000.0), 31);
        for b in 0..32u8 {
            assert_eq!(v.tempo_bin(v.tempo_value(b)), b);
        }
    }

    #[test]
    fn empty_ranges_rejected() {
        let bad = VocabConfig {
            pitch_min: 90,
            pitch_max: 80,
            ..VocabConfig::default()
        };
        assert!(matches!(Vocab::build(bad), Err(TokenizerError::EmptyRange(_))));
        let bad = VocabConfig {
            time_signatures: vec![],
            ..VocabConfig::default()
        };
        assert!(Vocab::build(bad).is_err());
        let bad = VocabConfig {
            velocity_bins: 0,
            ..VocabConfig::default()
        };
        assert!(Vocab::build(bad).is_err());
    }

    #[test]
    fn unsupported_meter_maps_to_closest_bar_length() {
        let v = Vocab::build(VocabConfig::default()).unwrap();
        assert_eq!(v.supported_time_signature(6, 8), (6, 8));
        assert_eq!(v.supported_time_signature(2, 2), (4, 4));
        assert_eq!(v.supported_time_signature(7, 8), (3, 4));
    }
}
