use super::{AudioClip, RenderError};
use crate::midi::Score;

/// Relative amplitudes of the fundamental and its first three overtones.
pub const HARMONICS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];
pub const ATTACK_SECONDS: f64 = 0.005;
pub const DECAY_SECONDS: f64 = 0.5;
pub const RELEASE_SECONDS: f64 = 0.010;
/// Pre-limiter gain. A full-velocity note peaks near `MIX_GAIN * 1.875`.
pub const MIX_GAIN: f64 = 0.25;

pub fn release_samples(sample_rate: u32) -> usize {
    (RELEASE_SECONDS * sample_rate as f64).round() as usize
}

fn pitch_hz(pitch: u8) -> f64 {
    440.0 * 2f64.powf((pitch as f64 - 69.0) / 12.0)
}

/// Total rendered length: last offset time plus the release tail.
fn total_samples(score: &Score, sample_rate: u32) -> usize {
    if score.notes.is_empty() {
        return 0;
    }
    let end = score.tick_to_seconds(score.end_tick());
    (end * sample_rate as f64).round() as usize + release_samples(sample_rate)
}

pub fn render_builtin(score: &Score, sample_rate: u32) -> Result<AudioClip, RenderError> {
    render_builtin_prefix(score, sample_rate, f64::INFINITY)
}

/// Renders only the first `⌊seconds · sample_rate⌋` samples. Every sample is
/// computed independently of where the buffer ends, so this equals cropping a
/// full render.
pub fn render_builtin_prefix(score: &Score, sample_rate: u32, seconds: f64) -> Result<AudioClip, RenderError> {
    if sample_rate == 0 {
        return Err(RenderError::Config("sample rate must be positive".into()));
    }
    score.validate().map_err(|e| RenderError::InvalidScore(e.to_string()))?;
    let sr = sample_rate as f64;
    let full = total_samples(score, sample_rate);
    let len = if seconds.is_finite() {
        full.min((seconds * sr).floor().max(0.0) as usize)
    } else {
        full
    };
    let mut mix = vec![0.0f64; len];
    let release = RELEASE_SECONDS;
    for note in &score.notes {
        let start = score.tick_to_seconds(note.onset);
        let gate = score.tick_to_seconds(note.offset()) - start;
        let first = (start * sr).ceil() as usize;
        if first >= len {
            continue;
        }
        let last = (((start + gate + release) * sr).ceil() as usize).min(len);
        let amp = MIX_GAIN * (note.velocity as f64 / 127.0).powi(2);
        let f0 = pitch_hz(note.pitch);
        let gate_level = envelope_sustain(gate);

        // Per-harmonic phasors advanced by complex rotation.
        let t0 = first as f64 / sr - start;
        let mut osc: Vec<(f64, f64, f64, f64, f64)> = HARMONICS
            .iter()
            .enumerate()
            .filter_map(|(h, &a)| {
                let f = f0 * (h + 1) as f64;
                if f >= sr / 2.0 {
                    return None;
                }
                let w = 2.0 * std::f64::consts::PI * f;
                let (s, c) = (w * t0).sin_cos();
                let (ds, dc) = (w / sr).sin_cos();
                Some((a, c, s, dc, ds))
            })
            .collect();
        for (i, out) in mix[first..last].iter_mut().enumerate() {
            let t = t0 + i as f64 / sr;
            let env = if t < gate {
                envelope_sustain(t)
            } else {
                gate_level * (1.0 - (t - gate) / release).max(0.0)
            };
            let mut v = 0.0;
            for o in osc.iter_mut() {
                v += o.0 * o.2;
                let (c, s) = (o.1 * o.3 - o.2 * o.4, o.2 * o.3 + o.1 * o.4);
                o.1 = c;
                o.2 = s;
            }
            *out += amp * env * v;
        }
    }
    Ok(AudioClip {
        sample_rate,
        samples: mix.into_iter().map(|x| x.tanh() as f32).collect(),
    })
}

/// Linear attack times exponential decay, before the gate closes.
fn envelope_sustain(t: f64) -> f64 {
    (t / ATTACK_SECONDS).min(1.0) * (-t / DECAY_SECONDS).exp()
}
