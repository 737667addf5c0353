//! MIDI parsing/writing and the note-attribute tokenizer.
//!
//! A score is a set of instrument tracks holding raw notes on a tick
//! timeline. The tokenizer quantizes each note onto a twelfth-of-a-
//! quarter grid and represents it as eight categorical attributes
//! (type, beat, chord, tempo, instrument, pitch, duration, velocity),
//! which encode to index rows over a fixed vocabulary and decode back
//! to a playable score.

pub mod chord;
pub mod corpus;
pub mod encode;
pub mod grid;
pub mod meter;
pub mod score;
pub mod smf;
pub mod vocab;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum MidiError {
    #[error("truncated file at byte {offset}")]
    Truncated { offset: usize },
    #[error("malformed data at byte {offset}: {what}")]
    Malformed { offset: usize, what: String },
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("token data: {0}")]
    Token(String),
    #[error("{}: {message}", path.display())]
    File { path: PathBuf, message: String },
}
