//! Standard MIDI File reading (formats 0 and 1) and writing (format 0).

use std::collections::{HashMap, VecDeque};

use super::score::{Note, Score, Tempo, TimeSignature};
use super::MidiError;

const PERCUSSION_CHANNEL: u8 = 9;

/// Notes of one (track, channel, program) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub track: usize,
    pub channel: u8,
    /// Zero-based General MIDI program number (0 = acoustic grand piano).
    pub program: u8,
    pub notes: Vec<Note>,
}

/// A parsed file before any instrument filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTrack {
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub parts: Vec<Part>,
    pub tempos: Vec<Tempo>,
    pub time_signatures: Vec<TimeSignature>,
}

impl MultiTrack {
    /// Merges every part into one normalized score.
    pub fn into_score(self) -> Score {
        let notes = self.parts.into_iter().flat_map(|p| p.notes).collect();
        Score::from_parts(
            self.ticks_per_quarter,
            notes,
            self.tempos,
            self.time_signatures,
        )
    }
}

/// Parses an SMF into a single merged score, ignoring percussion.
pub fn parse_smf(bytes: &[u8]) -> Result<Score, MidiError> {
    Ok(parse_smf_tracks(bytes)?.into_score())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::Truncated);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Result<u8, MidiError> {
        self.data.get(self.pos).copied().ok_or(MidiError::Truncated)
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::Malformed("variable-length quantity exceeds 4 bytes".into()))
    }
}

pub fn parse_smf_tracks(bytes: &[u8]) -> Result<MultiTrack, MidiError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| MidiError::BadHeader("file too short".into()))? != b"MThd" {
        return Err(MidiError::BadHeader("missing MThd".into()));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(MidiError::BadHeader(format!("header length {header_len}")));
    }
    let format = r.u16()?;
    let ntracks = r.u16()?;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(MidiError::BadHeader(format!("unsupported SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::BadHeader("SMPTE time division unsupported".into()));
    }
    if division == 0 {
        return Err(MidiError::BadHeader("zero ticks per quarter".into()));
    }

    let mut out = MultiTrack {
        format,
        ticks_per_quarter: division,
        parts: Vec::new(),
        tempos: Vec::new(),
        time_signatures: Vec::new(),
    };
    let mut track_index = 0usize;
    while track_index < ntracks as usize {
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        let body = r.take(len)?;
        if id != b"MTrk" {
            // Unknown chunks are skipped per the SMF spec.
            continue;
        }
        parse_track(body, track_index, &mut out)?;
        track_index += 1;
    }
    Ok(out)
}

fn parse_track(body: &[u8], track: usize, out: &mut MultiTrack) -> Result<(), MidiError> {
    let mut r = Reader::new(body);
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut programs = [0u8; 16];
    // Open note-ons per (channel, pitch), FIFO so overlapping repeats pair in order.
    let mut open: HashMap<(u8, u8), VecDeque<(u64, u8, u8)>> = HashMap::new();
    let mut parts: Vec<Part> = Vec::new();
    let mut part_index: HashMap<(u8, u8), usize> = HashMap::new();

    let mut push_note = |channel: u8, program: u8, note: Note, parts: &mut Vec<Part>| {
        let idx = *part_index.entry((channel, program)).or_insert_with(|| {
            parts.push(Part {
                track,
                channel,
                program,
                notes: Vec::new(),
            });
            parts.len() - 1
        });
        parts[idx].notes.push(note);
    };

    let mut ended = false;
    while r.remaining() > 0 {
        tick += r.vlq()? as u64;
        let first = r.peek()?;
        let status = if first & 0x80 != 0 {
            r.u8()?
        } else {
            running.ok_or_else(|| MidiError::Malformed("data byte without running status".into()))?
        };
        match status {
            0xFF => {
                running = None;
                let kind = r.u8()?;
                let len = r.vlq()? as usize;
                let data = r.take(len)?;
                match kind {
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us > 0 {
                            out.tempos.push(Tempo {
                                tick,
                                micros_per_quarter: us,
                            });
                        }
                    }
                    0x58 if len >= 2 => {
                        if data[1] < 8 {
                            out.time_signatures.push(TimeSignature::new(tick, data[0], 1 << data[1]));
                        }
                    }
                    0x2F => {
                        ended = true;
                        break;
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let channel = status & 0x0F;
                match status >> 4 {
                    0x8 | 0x9 => {
                        let pitch = r.u8()? & 0x7F;
                        let velocity = r.u8()? & 0x7F;
                        if channel == PERCUSSION_CHANNEL {
                            continue;
                        }
                        if status >> 4 == 0x9 && velocity > 0 {
                            open.entry((channel, pitch)).or_default().push_back((
                                tick,
                                velocity,
                                programs[channel as usize],
                            ));
                        } else if let Some((onset, vel, program)) =
                            open.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front)
                        {
                            let note = Note {
                                onset,
                                pitch,
                                duration: (tick - onset).max(1),
                                velocity: vel,
                            };
                            push_note(channel, program, note, &mut parts);
                        }
                    }
                    0xC => programs[channel as usize] = r.u8()? & 0x7F,
                    0xD => {
                        r.u8()?;
                    }
                    _ => {
                        r.take(2)?;
                    }
                }
            }
            other => {
                return Err(MidiError::Malformed(format!(
                    "unexpected status byte {other:#04x} in track"
                )))
            }
        }
    }
    if !ended {
        return Err(MidiError::Truncated);
    }

    // Unmatched note-ons are closed at the end of the track.
    let mut dangling: Vec<((u8, u8), (u64, u8, u8))> = open
        .into_iter()
        .flat_map(|(key, q)| q.into_iter().map(move |v| (key, v)))
        .collect();
    dangling.sort();
    for ((channel, pitch), (onset, velocity, program)) in dangling {
        let note = Note {
            onset,
            pitch,
            duration: (tick - onset).max(1),
            velocity,
        };
        push_note(channel, program, note, &mut parts);
    }
    out.parts.extend(parts);
    Ok(())
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7F) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = ((value & 0x7F) as u8) | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Serializes a score as a single-track format-0 SMF.
///
/// Same-tick events are ordered meta, program, note-off, note-on, so the
/// output is byte-deterministic and re-parses to the same score. Notes go on
/// channel 0 unless an earlier note of the same pitch is still sounding there,
/// in which case the next free channel (skipping percussion) takes them.
pub fn write_smf(score: &Score) -> Vec<u8> {
    write_smf_with_program(score, 0)
}

/// As [`write_smf`] with a different zero-based GM program on every channel.
pub fn write_smf_with_program(score: &Score, program: u8) -> Vec<u8> {
    const CHANNELS: [u8; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15];
    // (tick, kind rank, channel, pitch, bytes)
    let mut events: Vec<(u64, u8, u8, u8, Vec<u8>)> = Vec::new();
    for ts in &score.time_signatures {
        let dd = ts.denominator.trailing_zeros() as u8;
        events.push((ts.tick, 0, 0, 0, vec![0xFF, 0x58, 4, ts.numerator, dd, 24, 8]));
    }
    for t in &score.tempos {
        let us = t.micros_per_quarter.to_be_bytes();
        events.push((t.tick, 0, 0, 1, vec![0xFF, 0x51, 3, us[1], us[2], us[3]]));
    }
    // Latest offset per (channel slot, pitch).
    let mut busy_until: HashMap<(usize, u8), u64> = HashMap::new();
    let mut used = 1usize;
    for n in &score.notes {
        let slot = (0..CHANNELS.len())
            .find(|&c| busy_until.get(&(c, n.pitch)).map_or(true, |&end| end <= n.onset))
            .unwrap_or_else(|| {
                (0..CHANNELS.len())
                    .min_by_key(|&c| busy_until[&(c, n.pitch)])
                    .expect("channels")
            });
        busy_until.insert((slot, n.pitch), n.offset());
        used = used.max(slot + 1);
        let ch = CHANNELS[slot];
        events.push((n.offset(), 2, ch, n.pitch, vec![0x80 | ch, n.pitch, 0]));
        events.push((n.onset, 3, ch, n.pitch, vec![0x90 | ch, n.pitch, n.velocity]));
    }
    for &ch in &CHANNELS[..used] {
        events.push((0, 1, ch, 0, vec![0xC0 | ch, program & 0x7F]));
    }
    // Stable sort keeps note order (and thus FIFO pairing) for equal keys.
    events.sort_by_key(|e| (e.0, e.1, e.2, e.3));

    let mut track = Vec::new();
    let mut last = 0u64;
    for (tick, _, _, _, bytes) in &events {
        write_vlq(&mut track, (*tick - last) as u32);
        track.extend_from_slice(bytes);
        last = *tick;
    }
    track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&score.ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}
