//! Conversion between scores and token-space note sequences.
//!
//! Encoding sorts all notes by onset, derives the per-note attributes,
//! and prepends a fixed all-zero row that anchors every sequence.
//! Decoding walks the type/beat attributes to place notes back on the
//! grid; the chord attribute is derived data and is not consulted.

use crate::chord::detect_chords;
use crate::grid::{
    duration_bin, tempo_bin, velocity_bin, Grid, BEAT_POSITIONS, STEPS_PER_QUARTER,
};
use crate::meter::MeterMap;
use crate::score::{Instrument, RawNote, Score, TempoEvent, TimeSignature, Track};
use crate::vocab::{
    instrument_from_symbol, instrument_symbol, Attribute, AttributeVocab, NoteTokens,
    TYPE_CONTINUATION, TYPE_NEW_BEAT, TYPE_NEW_MEASURE, K,
};
use crate::MidiError;

/// Counts of attribute values that had to be clipped into range, in
/// attribute order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClipReport {
    pub clipped: [usize; K],
}

impl ClipReport {
    pub fn total(&self) -> usize {
        self.clipped.iter().sum()
    }
}

struct FlatNote {
    onset_step: u64,
    onset_tick: u64,
    duration_steps: u64,
    instrument: Instrument,
    pitch: u8,
    velocity: u8,
}

/// Encode a score as a token sequence over the vocabulary.
///
/// The result always starts with the all-zero row, so a score with N
/// notes encodes to N + 1 rows.
pub fn encode(score: &Score, vocab: &AttributeVocab) -> (Vec<NoteTokens>, ClipReport) {
    let grid = Grid::new(score.ticks_per_quarter);
    let mut flat: Vec<FlatNote> = Vec::with_capacity(score.note_count());
    for track in &score.tracks {
        for note in &track.notes {
            flat.push(FlatNote {
                onset_step: grid.step_of_tick(note.onset_tick),
                onset_tick: note.onset_tick,
                duration_steps: grid.steps_of_duration(note.duration_ticks),
                instrument: track.instrument,
                pitch: note.pitch.min(127),
                velocity: note.velocity.min(127),
            });
        }
    }
    flat.sort_by_key(|n| {
        (n.onset_step, n.instrument.id(), n.pitch, n.duration_steps, n.velocity)
    });

    let mut report = ClipReport::default();
    let mut out = vec![NoteTokens::zero()];
    if flat.is_empty() {
        return (out, report);
    }

    let last_step = flat.last().map(|n| n.onset_step).unwrap_or(0);
    let meter = MeterMap::build(score, grid, last_step);
    let chords = detect_chords(score, grid);

    let mut prev: Option<(usize, u64)> = None;
    for note in &flat {
        let (measure, pos) = meter.locate(note.onset_step);
        let quarter = pos / STEPS_PER_QUARTER;
        let type_sym = match prev {
            None => TYPE_NEW_MEASURE,
            Some((pm, _)) if measure > pm => TYPE_NEW_MEASURE,
            Some((_, pq)) if quarter != pq => TYPE_NEW_BEAT,
            _ => TYPE_CONTINUATION,
        };
        prev = Some((measure, quarter));

        let mut beat = pos;
        if beat >= BEAT_POSITIONS as u64 {
            beat = BEAT_POSITIONS as u64 - 1;
            report.clipped[Attribute::Beat.index()] += 1;
        }
        if note.duration_steps > 192 {
            report.clipped[Attribute::Duration.index()] += 1;
        }

        let mut tokens = NoteTokens::zero();
        let mut set = |attr: Attribute, symbol: &str| {
            let idx = vocab
                .table(attr)
                .index_of(symbol)
                .unwrap_or_else(|| panic!("{} symbol {symbol} missing", attr.name()));
            tokens.set(attr, idx);
        };
        set(Attribute::Type, type_sym);
        set(Attribute::Beat, &format!("{beat:03}"));
        set(Attribute::Chord, chords.label_at(note.onset_step));
        set(
            Attribute::Tempo,
            vocab
                .table(Attribute::Tempo)
                .symbol(tempo_bin(score.tempo_at(note.onset_tick)))
                .unwrap(),
        );
        set(Attribute::Instrument, instrument_symbol(note.instrument));
        set(Attribute::Pitch, &format!("{:03}", note.pitch));
        set(
            Attribute::Duration,
            vocab.table(Attribute::Duration).symbol(duration_bin(note.duration_steps)).unwrap(),
        );
        set(
            Attribute::Velocity,
            vocab.table(Attribute::Velocity).symbol(velocity_bin(note.velocity)).unwrap(),
        );
        out.push(tokens);
    }
    (out, report)
}

/// Target timing context for decoding, since token sequences carry no
/// resolution or time signature of their own.
#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    pub ticks_per_quarter: u32,
    pub numerator: u8,
    pub denominator: u8,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { ticks_per_quarter: 480, numerator: 4, denominator: 4 }
    }
}

impl DecodeOptions {
    /// Options matching a source score, for round trips.
    pub fn for_score(score: &Score) -> Self {
        let ts = score.time_signatures.first();
        DecodeOptions {
            ticks_per_quarter: score.ticks_per_quarter,
            numerator: ts.map_or(4, |t| t.numerator),
            denominator: ts.map_or(4, |t| t.denominator),
        }
    }
}

fn check_index(
    vocab: &AttributeVocab,
    attr: Attribute,
    index: usize,
    position: usize,
) -> Result<&str, MidiError> {
    let table = vocab.table(attr);
    if index == table.mask_index() {
        return Err(MidiError::Token(format!(
            "undecoded attribute: {} at note {position} is the mask token",
            attr.name()
        )));
    }
    table.symbol(index).ok_or_else(|| {
        MidiError::Token(format!(
            "invalid index {index} for {} at note {position} (content size {})",
            attr.name(),
            table.content_len()
        ))
    })
}

/// Decode a token sequence back into a score.
///
/// The first row is the sequence anchor and is skipped. Type drives
/// measure advancement, beat places the note inside the measure, and
/// onsets that would move backwards clamp to the previous onset.
pub fn decode(
    notes: &[NoteTokens],
    vocab: &AttributeVocab,
    options: DecodeOptions,
) -> Result<Score, MidiError> {
    let grid = Grid::new(options.ticks_per_quarter);
    let measure_len =
        crate::grid::measure_len_steps(options.numerator, options.denominator);

    let mut tracks: Vec<(Instrument, Vec<RawNote>)> = Vec::new();
    let mut tempo_map: Vec<TempoEvent> = Vec::new();
    let mut measure: u64 = 0;
    let mut prev_onset: u64 = 0;
    let mut first = true;

    for (position, tokens) in notes.iter().enumerate().skip(1) {
        let type_sym = check_index(vocab, Attribute::Type, tokens.get(Attribute::Type), position)?;
        let beat_sym = check_index(vocab, Attribute::Beat, tokens.get(Attribute::Beat), position)?;
        check_index(vocab, Attribute::Chord, tokens.get(Attribute::Chord), position)?;
        let tempo_sym =
            check_index(vocab, Attribute::Tempo, tokens.get(Attribute::Tempo), position)?;
        let inst_sym = check_index(
            vocab,
            Attribute::Instrument,
            tokens.get(Attribute::Instrument),
            position,
        )?;
        let pitch_sym =
            check_index(vocab, Attribute::Pitch, tokens.get(Attribute::Pitch), position)?;
        let dur_sym =
            check_index(vocab, Attribute::Duration, tokens.get(Attribute::Duration), position)?;
        let vel_sym =
            check_index(vocab, Attribute::Velocity, tokens.get(Attribute::Velocity), position)?;

        if type_sym == TYPE_NEW_MEASURE && !first {
            measure += 1;
        }
        let beat: u64 = beat_sym.parse().expect("beat symbols are numeric");
        let mut onset_step = measure * measure_len + beat;
        if onset_step < prev_onset {
            onset_step = prev_onset;
        }
        prev_onset = onset_step;

        let bpm: f64 = tempo_sym.parse().expect("tempo symbols are numeric");
        let onset_tick = grid.tick_of_step(onset_step);
        if first {
            tempo_map.push(TempoEvent { tick: 0, bpm });
        } else if tempo_map.last().map(|t| t.bpm) != Some(bpm) {
            tempo_map.push(TempoEvent { tick: onset_tick, bpm });
        }
        first = false;

        let dur_steps: u64 = dur_sym.parse().expect("duration symbols are numeric");
        let instrument = instrument_from_symbol(inst_sym)
            .ok_or_else(|| MidiError::Token(format!("unknown instrument '{inst_sym}'")))?;
        let note = RawNote {
            onset_tick,
            pitch: pitch_sym.parse().expect("pitch symbols are numeric"),
            duration_ticks: grid.tick_of_step(dur_steps).max(1),
            velocity: vel_sym.parse().expect("velocity symbols are numeric"),
        };
        match tracks.iter_mut().find(|(i, _)| *i == instrument) {
            Some((_, v)) => v.push(note),
            None => tracks.push((instrument, vec![note])),
        }
    }

    if tempo_map.is_empty() {
        tempo_map.push(TempoEvent { tick: 0, bpm: 120.0 });
    }
    tracks.sort_by_key(|(i, _)| i.id());
    let tracks = tracks
        .into_iter()
        .map(|(instrument, mut notes)| {
            notes.sort_by_key(|n| (n.onset_tick, n.pitch, n.duration_ticks, n.velocity));
            Track { instrument, notes }
        })
        .collect();

    Ok(Score {
        ticks_per_quarter: options.ticks_per_quarter,
        tempo_map,
        time_signatures: vec![TimeSignature {
            tick: 0,
            numerator: options.numerator,
            denominator: options.denominator,
        }],
        tracks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> AttributeVocab {
        AttributeVocab::canonical()
    }

    fn simple_score() -> Score {
        let mut s = Score::empty(480);
        s.tracks.push(Track {
            instrument: Instrument::Program(0),
            notes: vec![
                RawNote { onset_tick: 0, pitch: 60, duration_ticks: 480, velocity: 80 },
                RawNote { onset_tick: 480, pitch: 64, duration_ticks: 480, velocity: 80 },
                RawNote { onset_tick: 960, pitch: 67, duration_ticks: 960, velocity: 80 },
                RawNote { onset_tick: 1920, pitch: 72, duration_ticks: 480, velocity: 80 },
            ],
        });
        s
    }

    #[test]
    fn encode_prepends_anchor_row() {
        let (tokens, report) = encode(&simple_score(), &vocab());
        assert_eq!(tokens.len(), 5);
        assert_eq!(tokens[0], NoteTokens::zero());
        assert_eq!(report.total(), 0);
    }

    #[test]
    fn type_attribute_tracks_metrical_position() {
        let v = vocab();
        let (tokens, _) = encode(&simple_score(), &v);
        let ty = |i: usize| v.table(Attribute::Type).symbol(tokens[i].get(Attribute::Type)).unwrap();
        // Notes at steps 0, 12, 24 (same measure), 48 (next measure).
        assert_eq!(ty(1), TYPE_NEW_MEASURE);
        assert_eq!(ty(2), TYPE_NEW_BEAT);
        assert_eq!(ty(3), TYPE_NEW_BEAT);
        assert_eq!(ty(4), TYPE_NEW_MEASURE);
    }

    #[test]
    fn simultaneous_notes_are_continuations() {
        let v = vocab();
        let mut s = Score::empty(480);
        s.tracks.push(Track {
            instrument: Instrument::Program(0),
            notes: vec![
                RawNote { onset_tick: 0, pitch: 60, duration_ticks: 480, velocity: 80 },
                RawNote { onset_tick: 0, pitch: 64, duration_ticks: 480, velocity: 80 },
            ],
        });
        let (tokens, _) = encode(&s, &v);
        let ty = |i: usize| v.table(Attribute::Type).symbol(tokens[i].get(Attribute::Type)).unwrap();
        assert_eq!(ty(1), TYPE_NEW_MEASURE);
        assert_eq!(ty(2), TYPE_CONTINUATION);
    }

    #[test]
    fn round_trip_preserves_notes_exactly_on_grid() {
        let v = vocab();
        let score = simple_score();
        let (tokens, _) = encode(&score, &v);
        let back = decode(&tokens, &v, DecodeOptions::for_score(&score)).unwrap();
        assert_eq!(back.tracks.len(), 1);
        assert_eq!(back.tracks[0].instrument, Instrument::Program(0));
        let orig = &score.tracks[0].notes;
        let dec = &back.tracks[0].notes;
        assert_eq!(dec.len(), orig.len());
        for (a, b) in orig.iter().zip(dec) {
            assert_eq!(a.onset_tick, b.onset_tick);
            assert_eq!(a.pitch, b.pitch);
            assert_eq!(a.duration_ticks, b.duration_ticks);
            // Velocity 80 falls in bin 20, representative 82.
            assert!((a.velocity as i16 - b.velocity as i16).abs() <= 2);
        }
    }

    #[test]
    fn off_grid_onsets_round_to_nearest_step() {
        let v = vocab();
        let mut s = Score::empty(480);
        s.tracks.push(Track {
            instrument: Instrument::Program(5),
            notes: vec![RawNote { onset_tick: 487, pitch: 65, duration_ticks: 475, velocity: 66 }],
        });
        let (tokens, _) = encode(&s, &v);
        let back = decode(&tokens, &v, DecodeOptions::for_score(&s)).unwrap();
        let note = &back.tracks[0].notes[0];
        // 487 ticks is 12.175 steps, rounds to 12 steps = 480 ticks.
        assert_eq!(note.onset_tick, 480);
        assert_eq!(note.duration_ticks, 480);
    }

    #[test]
    fn decode_rejects_mask_index() {
        let v = vocab();
        let mut tokens = vec![NoteTokens::zero(), NoteTokens::zero()];
        tokens[1].set(Attribute::Pitch, v.table(Attribute::Pitch).mask_index());
        let err = decode(&tokens, &v, DecodeOptions::default()).unwrap_err();
        assert!(err.to_string().contains("undecoded attribute"), "{err}");
    }

    #[test]
    fn decode_rejects_out_of_range_index() {
        let v = vocab();
        let mut tokens = vec![NoteTokens::zero(), NoteTokens::zero()];
        tokens[1].set(Attribute::Velocity, v.table(Attribute::Velocity).pad_index());
        let err = decode(&tokens, &v, DecodeOptions::default()).unwrap_err();
        assert!(err.to_string().contains("invalid index"), "{err}");
    }

    #[test]
    fn decode_of_anchor_only_is_empty_score() {
        let v = vocab();
        let score = decode(&[NoteTokens::zero()], &v, DecodeOptions::default()).unwrap();
        assert_eq!(score.note_count(), 0);
    }

    #[test]
    fn backwards_beat_clamps_to_previous_onset() {
        let v = vocab();
        let mut a = NoteTokens::zero();
        a.set(Attribute::Type, v.table(Attribute::Type).index_of(TYPE_NEW_MEASURE).unwrap());
        a.set(Attribute::Beat, v.table(Attribute::Beat).index_of("024").unwrap());
        a.set(Attribute::Pitch, v.table(Attribute::Pitch).index_of("060").unwrap());
        a.set(Attribute::Duration, v.table(Attribute::Duration).index_of("012").unwrap());
        let mut b = a;
        b.set(Attribute::Type, v.table(Attribute::Type).index_of(TYPE_CONTINUATION).unwrap());
        b.set(Attribute::Beat, v.table(Attribute::Beat).index_of("010").unwrap());
        let score = decode(&[NoteTokens::zero(), a, b], &v, DecodeOptions::default()).unwrap();
        let notes = &score.tracks[0].notes;
        assert_eq!(notes[0].onset_tick, notes[1].onset_tick);
    }

    #[test]
    fn tempo_changes_become_tempo_events() {
        let v = vocab();
        let mut s = simple_score();
        s.tempo_map.push(TempoEvent { tick: 1900, bpm: 200.0 });
        let (tokens, _) = encode(&s, &v);
        let back = decode(&tokens, &v, DecodeOptions::for_score(&s)).unwrap();
        assert_eq!(back.tempo_map.len(), 2);
        assert_eq!(back.tempo_map[0].tick, 0);
        assert!((back.tempo_map[0].bpm - 120.0).abs() < 5.0);
        assert_eq!(back.tempo_map[1].tick, 1920);
        assert!((back.tempo_map[1].bpm - 200.0).abs() < 10.0);
    }
}
