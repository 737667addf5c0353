//! Property tests for the tokenizer and the SMF reader/writer.

use proptest::prelude::*;

use cadenza_midi::corpus::{round_trip_score, tokens_from_str, tokens_to_string};
use cadenza_midi::encode::{decode, encode, DecodeOptions};
use cadenza_midi::score::{Instrument, RawNote, Score, Track};
use cadenza_midi::smf::{parse_midi, write_midi};
use cadenza_midi::vocab::{Attribute, AttributeVocab, NoteTokens};

const TPQ: u32 = 480;
const TICKS_PER_STEP: u64 = TPQ as u64 / 12;

#[derive(Debug, Clone)]
struct GenNote {
    instrument: usize,
    pitch: u8,
    onset_step: u64,
    dur_steps: u64,
    velocity: u8,
}

/// Notes whose onsets never skip a whole measure, so the type/beat
/// encoding can represent every gap.
fn gapless_notes() -> impl Strategy<Value = Vec<GenNote>> {
    let note = (0usize..129, 0u8..128, 0u64..48, 1u64..48, 1u8..128);
    proptest::collection::vec(note, 1..40).prop_map(|raw| {
        let mut onset = 0u64;
        raw.into_iter()
            .map(|(instrument, pitch, gap, dur_steps, velocity)| {
                onset += gap;
                GenNote { instrument, pitch, onset_step: onset, dur_steps, velocity }
            })
            .collect()
    })
}

fn score_from(notes: &[GenNote]) -> Score {
    let mut score = Score::empty(TPQ);
    for n in notes {
        let instrument = Instrument::from_id(n.instrument).unwrap();
        let raw = RawNote {
            onset_tick: n.onset_step * TICKS_PER_STEP,
            pitch: n.pitch,
            duration_ticks: n.dur_steps * TICKS_PER_STEP,
            velocity: n.velocity,
        };
        match score.tracks.iter_mut().find(|t| t.instrument == instrument) {
            Some(t) => t.notes.push(raw),
            None => score.tracks.push(Track { instrument, notes: vec![raw] }),
        }
    }
    score
}

/// Normal form produced by the parser: tracks sorted by instrument,
/// notes sorted within each track, same-pitch overlaps removed.
fn normalize_for_smf(mut score: Score) -> Score {
    score.tracks.sort_by_key(|t| t.instrument.id());
    for track in &mut score.tracks {
        track.notes.sort_by_key(|n| (n.onset_tick, n.pitch, n.duration_ticks, n.velocity));
        let mut by_pitch: std::collections::BTreeMap<u8, u64> = std::collections::BTreeMap::new();
        let notes = std::mem::take(&mut track.notes);
        for mut n in notes {
            let next_free = by_pitch.entry(n.pitch).or_insert(0);
            if n.onset_tick < *next_free {
                continue;
            }
            n.duration_ticks = n.duration_ticks.max(1);
            *next_free = n.onset_tick + n.duration_ticks;
            track.notes.push(n);
        }
    }
    score.tracks.retain(|t| !t.notes.is_empty());
    score
}

proptest! {
    #[test]
    fn tokenizer_round_trip_holds_on_gapless_scores(notes in gapless_notes()) {
        let score = score_from(&notes);
        let vocab = AttributeVocab::canonical();
        let rt = round_trip_score(&score, &vocab).unwrap();
        prop_assert!(rt.pass(), "{rt:?}");
    }

    #[test]
    fn encoded_indices_are_always_content_symbols(notes in gapless_notes()) {
        let score = score_from(&notes);
        let vocab = AttributeVocab::canonical();
        let (tokens, _) = encode(&score, &vocab);
        for note in &tokens {
            for attr in Attribute::ALL {
                prop_assert!(note.get(attr) < vocab.table(attr).content_len());
            }
        }
    }

    #[test]
    fn smf_write_parse_is_identity_on_normal_forms(notes in gapless_notes()) {
        let score = normalize_for_smf(score_from(&notes));
        let bytes = write_midi(&score);
        let (parsed, warnings) = parse_midi(&bytes).unwrap();
        prop_assert_eq!(warnings.orphan_note_offs, 0);
        prop_assert_eq!(warnings.unterminated_notes, 0);
        prop_assert_eq!(&parsed.tracks, &score.tracks);
        prop_assert_eq!(&parsed.tempo_map, &score.tempo_map);
        prop_assert_eq!(write_midi(&parsed), bytes);
    }

    #[test]
    fn token_text_form_round_trips(rows in proptest::collection::vec(
        proptest::array::uniform8(0usize..200), 0..30)) {
        let tokens: Vec<NoteTokens> = rows.into_iter().map(|indices| NoteTokens { indices }).collect();
        let text = tokens_to_string(&tokens);
        prop_assert_eq!(tokens_from_str(&text).unwrap(), tokens);
    }
}

#[test]
fn multi_track_piece_survives_full_pipeline() {
    let mut score = Score::empty(TPQ);
    score.tracks.push(Track {
        instrument: Instrument::Program(0),
        notes: (0..16)
            .map(|i| RawNote {
                onset_tick: i * 480,
                pitch: 60 + [0, 2, 4, 5, 7, 9, 11, 12][i as usize % 8],
                duration_ticks: 480,
                velocity: 80,
            })
            .collect(),
    });
    score.tracks.push(Track {
        instrument: Instrument::Program(32),
        notes: (0..8)
            .map(|i| RawNote {
                onset_tick: i * 960,
                pitch: 36 + (i as u8 % 4),
                duration_ticks: 960,
                velocity: 100,
            })
            .collect(),
    });
    score.tracks.push(Track {
        instrument: Instrument::Drums,
        notes: (0..32)
            .map(|i| RawNote {
                onset_tick: i * 240,
                pitch: if i % 2 == 0 { 36 } else { 42 },
                duration_ticks: 120,
                velocity: 90,
            })
            .collect(),
    });

    let bytes = write_midi(&score);
    let (parsed, _) = parse_midi(&bytes).unwrap();
    assert_eq!(parsed.note_count(), 56);

    let vocab = AttributeVocab::canonical();
    let rt = round_trip_score(&parsed, &vocab).unwrap();
    assert!(rt.pass(), "{rt:?}");

    let (tokens, report) = encode(&parsed, &vocab);
    assert_eq!(report.total(), 0);
    let decoded = decode(&tokens, &vocab, DecodeOptions::for_score(&parsed)).unwrap();
    assert_eq!(decoded.note_count(), 56);
    let bytes2 = write_midi(&decoded);
    let (reparsed, _) = parse_midi(&bytes2).unwrap();
    assert_eq!(reparsed.note_count(), 56);
}
