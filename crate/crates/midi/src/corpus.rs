//! Corpus-level plumbing: token file IO, drum-only filtering, and the
//! round-trip comparison used to validate the tokenizer on real files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::encode::{decode, encode, DecodeOptions};
use crate::grid::Grid;
use crate::score::Score;
use crate::vocab::{Attribute, AttributeVocab, NoteTokens, K};
use crate::MidiError;

fn file_err(path: &Path, message: impl Into<String>) -> MidiError {
    MidiError::File { path: path.to_path_buf(), message: message.into() }
}

/// MIDI files directly inside a directory, sorted by file name.
pub fn list_midi_files(dir: &Path) -> Result<Vec<PathBuf>, MidiError> {
    let entries = fs::read_dir(dir).map_err(|e| file_err(dir, e.to_string()))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| file_err(dir, e.to_string()))?;
        let path = entry.path();
        let is_midi = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
            .unwrap_or(false);
        if path.is_file() && is_midi {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Token files directly inside a directory, sorted by file name.
pub fn list_token_files(dir: &Path) -> Result<Vec<PathBuf>, MidiError> {
    let entries = fs::read_dir(dir).map_err(|e| file_err(dir, e.to_string()))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| file_err(dir, e.to_string()))?;
        let path = entry.path();
        let is_tokens = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.eq_ignore_ascii_case("tokens"))
            .unwrap_or(false);
        if path.is_file() && is_tokens {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Render a token sequence as text, one note per line, K space-separated
/// decimal indices.
pub fn tokens_to_string(notes: &[NoteTokens]) -> String {
    let mut out = String::new();
    for note in notes {
        let fields: Vec<String> = note.indices.iter().map(|i| i.to_string()).collect();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

/// Parse the text form produced by [`tokens_to_string`].
pub fn tokens_from_str(text: &str) -> Result<Vec<NoteTokens>, MidiError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != K {
            return Err(MidiError::Token(format!(
                "line {}: expected {K} indices, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut note = NoteTokens::zero();
        for (i, f) in fields.iter().enumerate() {
            note.indices[i] = f.parse().map_err(|_| {
                MidiError::Token(format!("line {}: '{f}' is not an index", lineno + 1))
            })?;
        }
        out.push(note);
    }
    Ok(out)
}

pub fn write_tokens_file(path: &Path, notes: &[NoteTokens]) -> Result<(), MidiError> {
    fs::write(path, tokens_to_string(notes)).map_err(|e| file_err(path, e.to_string()))
}

pub fn read_tokens_file(path: &Path) -> Result<Vec<NoteTokens>, MidiError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e.to_string()))?;
    tokens_from_str(&text).map_err(|e| match e {
        MidiError::Token(msg) => file_err(path, msg),
        other => other,
    })
}

/// Check that every index is a content symbol of its attribute.
pub fn validate_tokens(notes: &[NoteTokens], vocab: &AttributeVocab) -> Result<(), MidiError> {
    for (pos, note) in notes.iter().enumerate() {
        for attr in Attribute::ALL {
            let idx = note.get(attr);
            let limit = vocab.table(attr).content_len();
            if idx >= limit {
                return Err(MidiError::Token(format!(
                    "note {pos}: {} index {idx} out of range (content size {limit})",
                    attr.name()
                )));
            }
        }
    }
    Ok(())
}

/// Whether the corpus filter keeps a score. Drum-only scores (including
/// empty ones) are removed.
pub fn keeps_score(score: &Score) -> bool {
    !score.is_drum_only()
}

/// Outcome of encoding a score and decoding it back.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundTrip {
    pub notes: usize,
    pub note_count_mismatch: bool,
    pub pitch_mismatches: usize,
    pub instrument_mismatches: usize,
    pub onset_violations: usize,
    pub duration_violations: usize,
    pub velocity_violations: usize,
    pub max_onset_error_steps: f64,
    pub max_duration_error_steps: f64,
    pub max_velocity_error: u8,
}

impl RoundTrip {
    pub fn pass(&self) -> bool {
        !self.note_count_mismatch
            && self.pitch_mismatches == 0
            && self.instrument_mismatches == 0
            && self.onset_violations == 0
            && self.duration_violations == 0
            && self.velocity_violations == 0
    }
}

fn flatten(score: &Score) -> Vec<(u64, usize, u8, u64, u8)> {
    let grid = Grid::new(score.ticks_per_quarter);
    let mut flat: Vec<(u64, usize, u8, u64, u8)> = score
        .tracks
        .iter()
        .flat_map(|t| {
            t.notes.iter().map(move |n| {
                (
                    grid.step_of_tick(n.onset_tick),
                    t.instrument.id(),
                    n.pitch,
                    grid.steps_of_duration(n.duration_ticks),
                    n.velocity,
                )
            })
        })
        .collect();
    flat.sort_unstable();
    flat
}

/// Encode a score, decode it back with matching timing options, and
/// compare note lists. Tolerances: onset and duration within half a
/// grid step, velocity within half a bin, pitch and instrument exact.
pub fn round_trip_score(score: &Score, vocab: &AttributeVocab) -> Result<RoundTrip, MidiError> {
    let (tokens, _) = encode(score, vocab);
    let decoded = decode(&tokens, vocab, DecodeOptions::for_score(score))?;

    let orig = flatten(score);
    let dec = flatten(&decoded);

    let mut rt = RoundTrip { notes: orig.len(), ..RoundTrip::default() };
    if orig.len() != dec.len() {
        rt.note_count_mismatch = true;
        return Ok(rt);
    }

    let half_step = 0.5 + 1e-9;
    for (o, d) in orig.iter().zip(&dec) {
        if o.2 != d.2 {
            rt.pitch_mismatches += 1;
        }
        if o.1 != d.1 {
            rt.instrument_mismatches += 1;
        }
        let onset_err = (o.0 as f64 - d.0 as f64).abs();
        rt.max_onset_error_steps = rt.max_onset_error_steps.max(onset_err);
        if onset_err > half_step {
            rt.onset_violations += 1;
        }
        let dur_err = (o.3 as f64 - d.3 as f64).abs();
        rt.max_duration_error_steps = rt.max_duration_error_steps.max(dur_err);
        if dur_err > half_step {
            rt.duration_violations += 1;
        }
        let vel_err = (o.4 as i16 - d.4 as i16).unsigned_abs() as u8;
        rt.max_velocity_error = rt.max_velocity_error.max(vel_err);
        if vel_err > 2 {
            rt.velocity_violations += 1;
        }
    }
    Ok(rt)
}

/// Escape a field for CSV output.
pub fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
