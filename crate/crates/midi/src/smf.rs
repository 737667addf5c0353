//! Standard MIDI File (type 0/1) reader and writer.
//!
//! Only the events the tokenizer needs are interpreted: note on/off,
//! program change, tempo and time-signature meta events. Everything else
//! (sysex, controllers, pitch bend, other metas) is skipped over.

use std::collections::VecDeque;

use crate::score::{Instrument, RawNote, Score, TempoEvent, TimeSignature, Track};
use crate::MidiError;

const DRUM_CHANNEL: u8 = 9;

/// Non-fatal issues encountered while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseWarnings {
    /// Note-off events with no matching note-on.
    pub orphan_note_offs: usize,
    /// Note-on events still open at end of track (dropped).
    pub unterminated_notes: usize,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8, MidiError> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or(MidiError::Truncated { offset: self.pos })?;
        self.pos += 1;
        Ok(b)
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.pos + n > self.data.len() {
            return Err(MidiError::Truncated { offset: self.pos });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.bytes(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// MIDI variable-length quantity, at most 4 bytes.
    fn varlen(&mut self) -> Result<u32, MidiError> {
        let mut value: u32 = 0;
        for i in 0.. {
            if i >= 4 {
                return Err(MidiError::Malformed {
                    offset: self.pos,
                    what: "variable-length quantity longer than 4 bytes".into(),
                });
            }
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                break;
            }
        }
        Ok(value)
    }
}

/// One note currently sounding while a track is scanned.
struct OpenNote {
    onset: u64,
    velocity: u8,
    instrument: Instrument,
}

#[derive(Default)]
struct TrackAccum {
    tempo: Vec<TempoEvent>,
    time_sigs: Vec<TimeSignature>,
    /// Finished notes, tagged with the instrument active at note-on.
    notes: Vec<(Instrument, RawNote)>,
    warnings: ParseWarnings,
}

/// Parse an SMF type 0 or 1 file.
pub fn parse_midi(bytes: &[u8]) -> Result<(Score, ParseWarnings), MidiError> {
    let mut c = Cursor { data: bytes, pos: 0 };

    if c.bytes(4)? != b"MThd" {
        return Err(MidiError::Malformed { offset: 0, what: "missing MThd header".into() });
    }
    let header_len = c.u32()?;
    if header_len < 6 {
        return Err(MidiError::Malformed {
            offset: c.pos - 4,
            what: format!("MThd length {header_len} < 6"),
        });
    }
    let format = c.u16()?;
    if format > 1 {
        return Err(MidiError::Malformed {
            offset: c.pos - 2,
            what: format!("unsupported SMF format {format} (only 0 and 1)"),
        });
    }
    let declared_tracks = c.u16()?;
    let division = c.u16()?;
    if division & 0x8000 != 0 {
        return Err(MidiError::Malformed {
            offset: c.pos - 2,
            what: "SMPTE time division is not supported".into(),
        });
    }
    if division == 0 {
        return Err(MidiError::Malformed {
            offset: c.pos - 2,
            what: "time division of zero".into(),
        });
    }
    // Skip any extra header bytes.
    c.bytes(header_len as usize - 6)?;

    let mut accums: Vec<TrackAccum> = Vec::new();
    let mut parsed_tracks = 0u16;
    while c.pos < c.data.len() && parsed_tracks < declared_tracks {
        let chunk_start = c.pos;
        let tag = c.bytes(4)?.to_owned();
        let len = c.u32()? as usize;
        if &tag != b"MTrk" {
            // Unknown chunk types must be skipped per the SMF spec.
            c.bytes(len)?;
            continue;
        }
        let body = c.bytes(len)?;
        accums.push(parse_track(body, chunk_start + 8)?);
        parsed_tracks += 1;
    }

    let mut warnings = ParseWarnings::default();
    let mut tempo: Vec<TempoEvent> = Vec::new();
    let mut time_sigs: Vec<TimeSignature> = Vec::new();
    let mut by_instrument: Vec<(Instrument, Vec<RawNote>)> = Vec::new();

    for acc in accums {
        warnings.orphan_note_offs += acc.warnings.orphan_note_offs;
        warnings.unterminated_notes += acc.warnings.unterminated_notes;
        tempo.extend(acc.tempo);
        time_sigs.extend(acc.time_sigs);
        for (inst, note) in acc.notes {
            match by_instrument.iter_mut().find(|(i, _)| *i == inst) {
                Some((_, v)) => v.push(note),
                None => by_instrument.push((inst, vec![note])),
            }
        }
    }

    tempo.sort_by_key(|e| e.tick);
    time_sigs.sort_by_key(|e| e.tick);
    if tempo.is_empty() {
        tempo.push(TempoEvent { tick: 0, bpm: 120.0 });
    }
    if time_sigs.is_empty() {
        time_sigs.push(TimeSignature { tick: 0, numerator: 4, denominator: 4 });
    }

    by_instrument.sort_by_key(|(i, _)| i.id());
    let tracks = by_instrument
        .into_iter()
        .map(|(instrument, mut notes)| {
            notes.sort_by_key(|n| (n.onset_tick, n.pitch, n.duration_ticks, n.velocity));
            Track { instrument, notes }
        })
        .collect();

    let score = Score {
        ticks_per_quarter: division as u32,
        tempo_map: tempo,
        time_signatures: time_sigs,
        tracks,
    };
    Ok((score, warnings))
}

fn parse_track(body: &[u8], base_offset: usize) -> Result<TrackAccum, MidiError> {
    let mut c = Cursor { data: body, pos: 0 };
    let mut acc = TrackAccum::default();
    let mut tick: u64 = 0;
    let mut running_status: Option<u8> = None;
    // Program per channel; channel 9 is drums regardless of program.
    let mut program = [0u8; 16];
    // FIFO per (channel, pitch) so overlapping same-pitch notes resolve in order.
    let mut open: Vec<VecDeque<OpenNote>> = (0..16 * 128).map(|_| VecDeque::new()).collect();

    let err_offset = |c: &Cursor| base_offset + c.pos;

    while c.pos < body.len() {
        tick += c.varlen()? as u64;
        let status = match c.peek() {
            Some(b) if b & 0x80 != 0 => {
                c.u8()?;
                if b < 0xf0 {
                    running_status = Some(b);
                }
                b
            }
            Some(_) => running_status.ok_or_else(|| MidiError::Malformed {
                offset: err_offset(&c),
                what: "data byte with no running status".into(),
            })?,
            None => break,
        };

        match status & 0xf0 {
            0x80 | 0x90 => {
                let channel = status & 0x0f;
                let pitch = c.u8()? & 0x7f;
                let velocity = c.u8()? & 0x7f;
                let key = channel as usize * 128 + pitch as usize;
                let is_on = status & 0xf0 == 0x90 && velocity > 0;
                if is_on {
                    let instrument = if channel == DRUM_CHANNEL {
                        Instrument::Drums
                    } else {
                        Instrument::Program(program[channel as usize])
                    };
                    open[key].push_back(OpenNote { onset: tick, velocity, instrument });
                } else {
                    match open[key].pop_front() {
                        Some(on) => {
                            let duration = (tick - on.onset).max(1);
                            acc.notes.push((
                                on.instrument,
                                RawNote {
                                    onset_tick: on.onset,
                                    pitch,
                                    duration_ticks: duration,
                                    velocity: on.velocity,
                                },
                            ));
                        }
                        None => acc.warnings.orphan_note_offs += 1,
                    }
                }
            }
            0xa0 | 0xb0 | 0xe0 => {
                c.bytes(2)?;
            }
            0xc0 => {
                let channel = status & 0x0f;
                program[channel as usize] = c.u8()? & 0x7f;
            }
            0xd0 => {
                c.bytes(1)?;
            }
            0xf0 => match status {
                0xf0 | 0xf7 => {
                    let len = c.varlen()? as usize;
                    c.bytes(len)?;
                }
                0xff => {
                    let meta = c.u8()?;
                    let len = c.varlen()? as usize;
                    let data = c.bytes(len)?;
                    match meta {
                        0x51 if len == 3 => {
                            let us_per_quarter =
                                u32::from_be_bytes([0, data[0], data[1], data[2]]);
                            if us_per_quarter > 0 {
                                acc.tempo.push(TempoEvent {
                                    tick,
                                    bpm: 60_000_000.0 / us_per_quarter as f64,
                                });
                            }
                        }
                        0x58 if len >= 2 => {
                            let denominator = 1u8.checked_shl(data[1] as u32).unwrap_or(0);
                            if data[0] > 0 && denominator > 0 {
                                acc.time_sigs.push(TimeSignature {
                                    tick,
                                    numerator: data[0],
                                    denominator,
                                });
                            }
                        }
                        0x2f => break,
                        _ => {}
                    }
                }
                _ => {
                    return Err(MidiError::Malformed {
                        offset: err_offset(&c),
                        what: format!("unexpected status byte 0x{status:02x}"),
                    })
                }
            },
            _ => unreachable!("status byte always has high bit set"),
        }
    }

    acc.warnings.unterminated_notes +=
        open.iter().map(|q| q.len()).sum::<usize>();
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

fn push_varlen(out: &mut Vec<u8>, mut value: u64) {
    let mut stack = [0u8; 10];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7f) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let mut b = stack[i];
        if i > 0 {
            b |= 0x80;
        }
        out.push(b);
    }
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Meta(Vec<u8>),
    NoteOff { channel: u8, pitch: u8 },
    ProgramChange { channel: u8, program: u8 },
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
}

fn encode_track(mut events: Vec<(u64, EventKind)>) -> Vec<u8> {
    // Stable order: offs before program changes before ons at the same tick.
    events.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut body = Vec::new();
    let mut last_tick = 0u64;
    for (tick, ev) in events {
        push_varlen(&mut body, tick - last_tick);
        last_tick = tick;
        match ev {
            EventKind::Meta(bytes) => body.extend_from_slice(&bytes),
            EventKind::NoteOff { channel, pitch } => {
                body.extend_from_slice(&[0x80 | channel, pitch, 0]);
            }
            EventKind::ProgramChange { channel, program } => {
                body.extend_from_slice(&[0xc0 | channel, program]);
            }
            EventKind::NoteOn { channel, pitch, velocity } => {
                body.extend_from_slice(&[0x90 | channel, pitch, velocity]);
            }
        }
    }
    // End-of-track meta.
    push_varlen(&mut body, 0);
    body.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut chunk = Vec::with_capacity(body.len() + 8);
    chunk.extend_from_slice(b"MTrk");
    chunk.extend_from_slice(&(body.len() as u32).to_be_bytes());
    chunk.extend_from_slice(&body);
    chunk
}

/// Serialize a score as SMF type 1: one meta track plus one track per instrument.
pub fn write_midi(score: &Score) -> Vec<u8> {
    let n_tracks = 1 + score.tracks.len() as u16;
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&n_tracks.to_be_bytes());
    out.extend_from_slice(&(score.ticks_per_quarter as u16).to_be_bytes());

    let mut meta_events: Vec<(u64, EventKind)> = Vec::new();
    for ts in &score.time_signatures {
        let den_pow = ts.denominator.trailing_zeros() as u8;
        meta_events.push((
            ts.tick,
            EventKind::Meta(vec![0xff, 0x58, 4, ts.numerator, den_pow, 24, 8]),
        ));
    }
    for te in &score.tempo_map {
        let us = (60_000_000.0 / te.bpm).round().clamp(1.0, 16_777_215.0) as u32;
        let b = us.to_be_bytes();
        meta_events.push((te.tick, EventKind::Meta(vec![0xff, 0x51, 3, b[1], b[2], b[3]])));
    }
    out.extend_from_slice(&encode_track(meta_events));

    let mut next_melodic_channel = 0u8;
    for track in &score.tracks {
        let channel = match track.instrument {
            Instrument::Drums => DRUM_CHANNEL,
            Instrument::Program(_) => {
                let ch = next_melodic_channel;
                next_melodic_channel += 1;
                if next_melodic_channel == DRUM_CHANNEL {
                    next_melodic_channel += 1;
                }
                if next_melodic_channel >= 16 {
                    next_melodic_channel = 0;
                }
                ch
            }
        };
        let mut events: Vec<(u64, EventKind)> = Vec::new();
        if let Instrument::Program(p) = track.instrument {
            events.push((0, EventKind::ProgramChange { channel, program: p }));
        }
        for note in &track.notes {
            events.push((
                note.onset_tick,
                EventKind::NoteOn {
                    channel,
                    pitch: note.pitch,
                    velocity: note.velocity.clamp(1, 127),
                },
            ));
            events.push((
                note.onset_tick + note.duration_ticks,
                EventKind::NoteOff { channel, pitch: note.pitch },
            ));
        }
        out.extend_from_slice(&encode_track(events));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_note_score() -> Score {
        let mut s = Score::empty(480);
        s.tracks.push(Track {
            instrument: Instrument::Program(0),
            notes: vec![RawNote { onset_tick: 0, pitch: 60, duration_ticks: 480, velocity: 90 }],
        });
        s
    }

    #[test]
    fn write_then_parse_round_trips_notes() {
        let score = one_note_score();
        let bytes = write_midi(&score);
        let (parsed, warnings) = parse_midi(&bytes).unwrap();
        assert_eq!(warnings, ParseWarnings::default());
        assert_eq!(parsed.tracks.len(), 1);
        assert_eq!(parsed.tracks[0].notes, score.tracks[0].notes);
        assert_eq!(parsed.tempo_map, score.tempo_map);
        assert_eq!(parsed.time_signatures, score.time_signatures);
    }

    #[test]
    fn missing_tempo_defaults_to_120() {
        // Header + one empty track, no meta events.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let (score, _) = parse_midi(&bytes).unwrap();
        assert_eq!(score.tempo_map, vec![TempoEvent { tick: 0, bpm: 120.0 }]);
        assert_eq!(
            score.time_signatures,
            vec![TimeSignature { tick: 0, numerator: 4, denominator: 4 }]
        );
    }

    #[test]
    fn header_only_file_gives_empty_score() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        let (score, _) = parse_midi(&bytes).unwrap();
        assert_eq!(score.tracks.len(), 0);
    }

    #[test]
    fn malformed_header_reports_offset() {
        let err = parse_midi(b"MThx\x00\x00\x00\x06").unwrap_err();
        match err {
            MidiError::Malformed { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn velocity_zero_note_on_acts_as_off() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        // on (vel 80) at 0, "on" vel 0 at 240 via running status, EOT.
        let body = [0x00, 0x90, 60, 80, 0x81, 0x70, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&body);
        let (score, warnings) = parse_midi(&bytes).unwrap();
        assert_eq!(warnings, ParseWarnings::default());
        assert_eq!(score.tracks[0].notes.len(), 1);
        assert_eq!(score.tracks[0].notes[0].duration_ticks, 240);
    }

    #[test]
    fn unterminated_note_is_dropped_with_warning() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        let body = [0x00, 0x90, 60, 80, 0x00, 0xff, 0x2f, 0x00];
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&body);
        let (score, warnings) = parse_midi(&bytes).unwrap();
        assert_eq!(score.note_count(), 0);
        assert_eq!(warnings.unterminated_notes, 1);
    }

    #[test]
    fn drum_channel_maps_to_drums() {
        let mut s = Score::empty(480);
        s.tracks.push(Track {
            instrument: Instrument::Drums,
            notes: vec![RawNote { onset_tick: 0, pitch: 36, duration_ticks: 120, velocity: 100 }],
        });
        let bytes = write_midi(&s);
        let (parsed, _) = parse_midi(&bytes).unwrap();
        assert_eq!(parsed.tracks[0].instrument, Instrument::Drums);
    }
}
