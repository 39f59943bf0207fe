use super::{AudioClip, RenderError};

pub const WAV_HEADER_LEN: usize = 44;

/// Canonical 44-byte-header RIFF WAV, 16-bit PCM mono.
pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(WAV_HEADER_LEN + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) as f64 * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Reads 16-bit PCM WAV. Multi-channel input is averaged down to mono;
/// unknown chunks are skipped.
pub fn read_wav(bytes: &[u8]) -> Result<AudioClip, RenderError> {
    let bad = |m: &str| RenderError::Wav(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let u16_at = |b: &[u8], i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
    let u32_at = |b: &[u8], i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
    let mut pos = 12;
    let mut format: Option<(u16, u32)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| bad("chunk size overflow"))?;
        match id {
            b"fmt " => {
                if size < 16 || body_end > bytes.len() {
                    return Err(bad("short fmt chunk"));
                }
                let b = &bytes[body_start..body_end];
                let (tag, channels, rate, bits) = (u16_at(b, 0), u16_at(b, 2), u32_at(b, 4), u16_at(b, 14));
                let pcm = tag == 1 || (tag == 0xFFFE && size >= 26 && u16_at(b, 24) == 1);
                if !pcm || bits != 16 {
                    return Err(bad("only 16-bit PCM is supported"));
                }
                if channels == 0 || rate == 0 {
                    return Err(bad("zero channels or sample rate"));
                }
                format = Some((channels, rate));
            }
            b"data" => {
                let (channels, rate) = format.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                let end = body_end.min(bytes.len());
                let frame = 2 * channels as usize;
                let data = &bytes[body_start..end];
                let samples = data
                    .chunks_exact(frame)
                    .map(|f| {
                        let sum: f64 = f.chunks_exact(2).map(|s| i16::from_le_bytes([s[0], s[1]]) as f64).sum();
                        ((sum / channels as f64) / 32767.0).clamp(-1.0, 1.0) as f32
                    })
                    .collect();
                return Ok(AudioClip {
                    sample_rate: rate,
                    samples,
                });
            }
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    Err(bad("no data chunk"))
}
