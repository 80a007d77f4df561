//! Minimal Standard MIDI File reader (formats 0 and 1).
//!
//! Only note-on, note-off and set-tempo events are interpreted; every other
//! message is skipped using its declared length.

use std::collections::{HashMap, VecDeque};
use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::synthdata::NoteGrid;

/// Tempo in effect before the first set-tempo event (120 bpm).
pub const DEFAULT_TEMPO_US: u32 = 500_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MidiNote {
    pub pitch: u8,
    pub onset_s: f64,
    pub release_s: f64,
    pub velocity: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Division {
    TicksPerQuarter(u16),
    /// Frames per second and ticks per frame.
    Smpte { fps: u8, ticks_per_frame: u8 },
}

/// Tempo changes on the tick timeline, strictly increasing in tick.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TempoMap {
    entries: Vec<(u64, u32)>,
}

impl TempoMap {
    pub fn new(mut changes: Vec<(u64, u32)>) -> Self {
        changes.sort_by_key(|c| c.0);
        let mut entries: Vec<(u64, u32)> = Vec::with_capacity(changes.len());
        for (tick, tempo) in changes {
            match entries.last_mut() {
                // several changes at one tick: the last one wins
                Some(last) if last.0 == tick => last.1 = tempo,
                _ => entries.push((tick, tempo)),
            }
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[(u64, u32)] {
        &self.entries
    }

    pub fn tick_to_seconds(&self, tick: u64, division: Division) -> f64 {
        let tpq = match division {
            Division::Smpte { fps, ticks_per_frame } => {
                return tick as f64 / (fps as f64 * ticks_per_frame as f64);
            }
            Division::TicksPerQuarter(tpq) => tpq as f64,
        };
        let mut seconds = 0.0;
        let mut last_tick = 0u64;
        let mut tempo = DEFAULT_TEMPO_US;
        for &(at, next) in &self.entries {
            if at >= tick {
                break;
            }
            seconds += (at - last_tick) as f64 * tempo as f64 / (tpq * 1e6);
            last_tick = at;
            tempo = next;
        }
        seconds + (tick - last_tick) as f64 * tempo as f64 / (tpq * 1e6)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        if self.pos >= self.end {
            return Err(Error::parse(self.pos, "unexpected end of chunk"));
        }
        self.pos += 1;
        Ok(self.bytes[self.pos - 1])
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if len > self.end - self.pos {
            return Err(Error::parse(
                self.pos,
                format!("field of {len} bytes runs past chunk end"),
            ));
        }
        self.pos += len;
        Ok(&self.bytes[self.pos - len..self.pos])
    }

    fn varint(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::parse(start, "variable-length quantity longer than 4 bytes"))
    }
}

/// Decodes a variable-length quantity, returning the value and bytes consumed.
pub fn read_varint(bytes: &[u8]) -> Result<(u32, usize)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        end: bytes.len(),
    };
    let v = r.varint()?;
    Ok((v, r.pos))
}

#[derive(Debug, Clone, Copy)]
enum NoteEvent {
    On { channel: u8, pitch: u8, velocity: u8 },
    Off { channel: u8, pitch: u8 },
}

#[derive(Debug)]
struct TrackEvents {
    notes: Vec<(u64, NoteEvent)>,
    tempos: Vec<(u64, u32)>,
    end_tick: u64,
}

fn parse_track(bytes: &[u8], start: usize, end: usize) -> Result<TrackEvents> {
    let mut r = Reader { bytes, pos: start, end };
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut out = TrackEvents {
        notes: Vec::new(),
        tempos: Vec::new(),
        end_tick: 0,
    };
    while r.pos < r.end {
        tick += r.varint()? as u64;
        let status_at = r.pos;
        let first = r.u8()?;
        match first {
            0xff => {
                running = None;
                let kind = r.u8()?;
                let len = r.varint()? as usize;
                let data = r.take(len)?;
                match kind {
                    0x51 => {
                        if len != 3 {
                            return Err(Error::parse(status_at, format!("tempo event of length {len}")));
                        }
                        let tempo = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        out.tempos.push((tick, tempo));
                    }
                    0x2f => break,
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.varint()? as usize;
                r.take(len)?;
            }
            0xf1..=0xfe => {
                return Err(Error::parse(status_at, format!("undecodable status byte {first:#04x}")));
            }
            _ => {
                let (status, first_data) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, r.u8()?)
                } else {
                    let status = running
                        .ok_or_else(|| Error::parse(status_at, "data byte without running status"))?;
                    (status, first)
                };
                let channel = status & 0x0f;
                let two_bytes = !matches!(status & 0xf0, 0xc0 | 0xd0);
                let second = if two_bytes { r.u8()? } else { 0 };
                if first_data & 0x80 != 0 || second & 0x80 != 0 {
                    return Err(Error::parse(status_at, "data byte with high bit set"));
                }
                match status & 0xf0 {
                    0x90 if second > 0 => out.notes.push((
                        tick,
                        NoteEvent::On {
                            channel,
                            pitch: first_data,
                            velocity: second,
                        },
                    )),
                    0x80 | 0x90 => out.notes.push((
                        tick,
                        NoteEvent::Off {
                            channel,
                            pitch: first_data,
                        },
                    )),
                    _ => {}
                }
            }
        }
    }
    out.end_tick = tick;
    Ok(out)
}

/// Parsed file: header fields, tempo map and paired notes.
#[derive(Debug, Clone, PartialEq)]
pub struct MidiFile {
    pub format: u16,
    pub division: Division,
    pub tempo: TempoMap,
    pub notes: Vec<MidiNote>,
}

pub fn parse_smf(bytes: &[u8]) -> Result<Vec<MidiNote>> {
    Ok(parse_smf_file(bytes)?.notes)
}

pub fn parse_smf_file(bytes: &[u8]) -> Result<MidiFile> {
    if bytes.len() < 8 || &bytes[..4] != b"MThd" {
        return Err(Error::BadMagic {
            expected: *b"MThd",
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let be32 = |at: usize| u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let header_len = be32(4);
    if header_len < 6 || 8 + header_len > bytes.len() {
        return Err(Error::parse(4, format!("header chunk length {header_len} invalid or truncated")));
    }
    let be16 = |at: usize| u16::from_be_bytes([bytes[at], bytes[at + 1]]);
    let format = be16(8);
    let n_tracks = be16(10);
    let raw_division = be16(12);
    if format > 1 {
        return Err(Error::parse(8, format!("unsupported SMF format {format}")));
    }
    let division = if raw_division & 0x8000 != 0 {
        let fps = (-((raw_division >> 8) as u8 as i8)) as u8;
        Division::Smpte {
            fps,
            ticks_per_frame: (raw_division & 0xff) as u8,
        }
    } else {
        Division::TicksPerQuarter(raw_division)
    };
    if matches!(division, Division::TicksPerQuarter(0) | Division::Smpte { fps: 0, .. } | Division::Smpte { ticks_per_frame: 0, .. }) {
        return Err(Error::parse(12, "zero time division"));
    }

    let mut pos = 8 + header_len;
    let mut tracks = Vec::new();
    while pos < bytes.len() && tracks.len() < n_tracks as usize {
        if pos + 8 > bytes.len() {
            return Err(Error::parse(pos, "truncated chunk header"));
        }
        let len = be32(pos + 4);
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(Error::parse(pos, format!("chunk of {len} bytes runs past end of file")));
        }
        if &bytes[pos..pos + 4] == b"MTrk" {
            tracks.push(parse_track(bytes, body, body + len)?);
        }
        pos = body + len;
    }
    if tracks.len() < n_tracks as usize {
        return Err(Error::parse(pos, format!("expected {n_tracks} tracks, found {}", tracks.len())));
    }

    let tempo = TempoMap::new(tracks.iter().flat_map(|t| t.tempos.iter().copied()).collect());
    let end_tick = tracks.iter().map(|t| t.end_tick).max().unwrap_or(0);
    // shared timeline: stable sort keeps track order, then file order, per tick
    let mut merged: Vec<(u64, NoteEvent)> = tracks.iter().flat_map(|t| t.notes.iter().copied()).collect();
    merged.sort_by_key(|e| e.0);

    let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
    let mut spans: Vec<(u64, u64, u8, u8)> = Vec::new();
    for (tick, ev) in merged {
        match ev {
            NoteEvent::On { channel, pitch, velocity } => {
                open.entry((channel, pitch)).or_default().push_back((tick, velocity));
            }
            NoteEvent::Off { channel, pitch } => {
                if let Some((on, velocity)) = open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
                    spans.push((on, tick, pitch, velocity));
                }
            }
        }
    }
    // notes still sounding at the end are released at the last tick
    for ((_, pitch), queue) in open {
        for (on, velocity) in queue {
            spans.push((on, end_tick, pitch, velocity));
        }
    }
    spans.sort_by_key(|&(on, off, pitch, _)| (on, pitch, off));
    let notes = spans
        .into_iter()
        .map(|(on, off, pitch, velocity)| MidiNote {
            pitch,
            onset_s: tempo.tick_to_seconds(on, division),
            release_s: tempo.tick_to_seconds(off, division),
            velocity,
        })
        .collect();
    Ok(MidiFile {
        format,
        division,
        tempo,
        notes,
    })
}

/// Onset grid with one row per pitch in `pitch_range` and step `⌊onset/dt⌋`.
pub fn onsets_to_grid(
    notes: &[MidiNote],
    dt: f64,
    n_steps: usize,
    pitch_range: RangeInclusive<u8>,
) -> Result<NoteGrid> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step duration must be positive, got {dt}")));
    }
    let lo = *pitch_range.start();
    let k = pitch_range.clone().count();
    let mut events: Vec<(usize, usize)> = notes
        .iter()
        .filter(|n| pitch_range.contains(&n.pitch) && n.onset_s >= 0.0)
        .map(|n| ((n.pitch - lo) as usize, (n.onset_s / dt).floor() as usize))
        .filter(|&(_, t)| t < n_steps)
        .collect();
    events.sort_unstable();
    events.dedup();
    NoteGrid::new(k, n_steps, events)
}

#[cfg(test)]
pub(crate) mod writer {
    //! Tiny SMF writer used to round-trip the reader in tests.
    use super::MidiNote;

    pub fn varint(mut v: u32, out: &mut Vec<u8>) {
        let mut stack = vec![(v & 0x7f) as u8];
        v >>= 7;
        while v > 0 {
            stack.push((v & 0x7f) as u8 | 0x80);
            v >>= 7;
        }
        out.extend(stack.iter().rev());
    }

    /// Format-0 file at 120 bpm with `tpq` ticks per quarter.
    pub fn write(notes: &[MidiNote], tpq: u16) -> Vec<u8> {
        let to_tick = |s: f64| (s * 2.0 * tpq as f64).round() as u32;
        let mut events: Vec<(u32, u8, u8, u8)> = Vec::new();
        for n in notes {
            events.push((to_tick(n.onset_s), 1, n.pitch, n.velocity));
            events.push((to_tick(n.release_s), 0, n.pitch, 0));
        }
        events.sort();
        let mut track = Vec::new();
        let mut last = 0;
        for (tick, on, pitch, vel) in events {
            varint(tick - last, &mut track);
            last = tick;
            track.extend([if on == 1 { 0x90 } else { 0x80 }, pitch, vel]);
        }
        track.extend([0x00, 0xff, 0x2f, 0x00]);
        let mut out = b"MThd".to_vec();
        out.extend(6u32.to_be_bytes());
        out.extend([0, 0, 0, 1]);
        out.extend(tpq.to_be_bytes());
        out.extend(b"MTrk");
        out.extend((track.len() as u32).to_be_bytes());
        out.extend(track);
        out
    }
}
