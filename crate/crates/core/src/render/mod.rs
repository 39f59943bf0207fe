//! Score-to-audio rendering.
//!
//! The builtin additive synthesizer is pure and bit-deterministic. The
//! external route hands a Standard MIDI File and a soundfont path to a
//! user-supplied program and resamples whatever it writes back.

mod external;
mod synth;
mod wav;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use external::render_external;
pub use synth::{render_builtin, render_builtin_prefix, release_samples, ATTACK_SECONDS, DECAY_SECONDS, HARMONICS, MIX_GAIN, RELEASE_SECONDS};
pub use wav::{read_wav, write_wav, WAV_HEADER_LEN};

use crate::midi::Score;

pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error("malformed WAV: {0}")]
    Wav(String),
    #[error("external renderer failed: {message}; stderr: {stderr}")]
    External { message: String, stderr: String },
    #[error("renderer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn silent(sample_rate: u32, len: usize) -> Self {
        AudioClip {
            sample_rate,
            samples: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Root mean square; 0 for an empty clip.
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn is_valid(&self) -> bool {
        self.sample_rate > 0 && self.samples.iter().all(|s| s.is_finite() && s.abs() <= 1.0)
    }
}

/// The first `⌊seconds · sample_rate⌋` samples; shorter clips are returned
/// whole. Non-positive `seconds` yields an empty clip.
pub fn crop_audio(clip: &AudioClip, seconds: f64) -> AudioClip {
    let n = (seconds * clip.sample_rate as f64).floor().max(0.0) as usize;
    AudioClip {
        sample_rate: clip.sample_rate,
        samples: clip.samples[..clip.samples.len().min(n)].to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RendererChoice {
    #[default]
    Builtin,
    /// `program <midi> <soundfont> <out.wav>` must exit 0 and write a WAV.
    External { program: PathBuf, soundfont: PathBuf },
}

impl RendererChoice {
    pub fn validate(&self) -> Result<(), RenderError> {
        match self {
            RendererChoice::Builtin => Ok(()),
            RendererChoice::External { program, soundfont } => {
                for (what, p) in [("renderer program", program), ("soundfont", soundfont)] {
                    if !p.exists() {
                        return Err(RenderError::Config(format!("{what} {} does not exist", p.display())));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            RendererChoice::Builtin => "builtin".into(),
            RendererChoice::External { soundfont, .. } => soundfont
                .file_stem()
                .map_or_else(|| soundfont.display().to_string(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

pub fn render(score: &Score, choice: &RendererChoice, sample_rate: u32) -> Result<AudioClip, RenderError> {
    match choice {
        RendererChoice::Builtin => render_builtin(score, sample_rate),
        RendererChoice::External { program, soundfont } => render_external(score, program, soundfont, sample_rate),
    }
}

/// Equivalent to `crop_audio(render(..), seconds)`; the builtin synthesizer
/// skips everything past the crop point.
pub fn render_cropped(score: &Score, choice: &RendererChoice, sample_rate: u32, seconds: f64) -> Result<AudioClip, RenderError> {
    match choice {
        RendererChoice::Builtin => render_builtin_prefix(score, sample_rate, seconds),
        _ => Ok(crop_audio(&render(score, choice, sample_rate)?, seconds)),
    }
}
