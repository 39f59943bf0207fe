use std::path::Path;
use std::process::Command;

use super::wav::read_wav;
use super::{AudioClip, RenderError};
use crate::midi::{write_smf, Score};

/// Runs `program <midi> <soundfont> <out.wav>` in a scratch directory and
/// resamples the result to `sample_rate`.
pub fn render_external(score: &Score, program: &Path, soundfont: &Path, sample_rate: u32) -> Result<AudioClip, RenderError> {
    if sample_rate == 0 {
        return Err(RenderError::Config("sample rate must be positive".into()));
    }
    let dir = tempfile::tempdir()?;
    let midi = dir.path().join("in.mid");
    let out = dir.path().join("out.wav");
    std::fs::write(&midi, write_smf(score))?;
    let result = Command::new(program)
        .arg(&midi)
        .arg(soundfont)
        .arg(&out)
        .output()
        .map_err(|e| RenderError::External {
            message: format!("could not start {}: {e}", program.display()),
            stderr: String::new(),
        })?;
    let stderr = String::from_utf8_lossy(&result.stderr).into_owned();
    if !result.status.success() {
        return Err(RenderError::External {
            message: format!("{} exited with {}", program.display(), result.status),
            stderr,
        });
    }
    let bytes = std::fs::read(&out).map_err(|e| RenderError::External {
        message: format!("no output WAV: {e}"),
        stderr: stderr.clone(),
    })?;
    let clip = read_wav(&bytes).map_err(|e| RenderError::External {
        message: e.to_string(),
        stderr,
    })?;
    Ok(resample_linear(&clip, sample_rate))
}

/// Linear-interpolation resampling; identity when the rates agree.
pub(crate) fn resample_linear(clip: &AudioClip, sample_rate: u32) -> AudioClip {
    if clip.sample_rate == sample_rate || clip.samples.is_empty() {
        return AudioClip {
            sample_rate,
            samples: clip.samples.clone(),
        };
    }
    let ratio = clip.sample_rate as f64 / sample_rate as f64;
    let n = ((clip.samples.len() as f64) / ratio).round() as usize;
    let src = &clip.samples;
    let samples = (0..n)
        .map(|i| {
            let x = i as f64 * ratio;
            let j = x.floor() as usize;
            let frac = x - j as f64;
            let a = src[j.min(src.len() - 1)] as f64;
            let b = src[(j + 1).min(src.len() - 1)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect();
    AudioClip { sample_rate, samples }
}
