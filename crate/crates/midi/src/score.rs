//! In-memory representation of a parsed MIDI score.

use serde::{Deserialize, Serialize};

/// Instrument playing a track: a General MIDI program or the drum kit
/// (channel 10 in MIDI terms).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Instrument {
    Program(u8),
    Drums,
}

impl Instrument {
    /// Categorical id used by the tokenizer: programs 0..=127, drums = 128.
    pub fn id(self) -> usize {
        match self {
            Instrument::Program(p) => p as usize,
            Instrument::Drums => 128,
        }
    }

    pub fn from_id(id: usize) -> Option<Instrument> {
        match id {
            0..=127 => Some(Instrument::Program(id as u8)),
            128 => Some(Instrument::Drums),
            _ => None,
        }
    }
}

/// A note with raw MIDI timing, before quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawNote {
    pub onset_tick: u64,
    pub pitch: u8,
    /// Always >= 1.
    pub duration_ticks: u64,
    pub velocity: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoEvent {
    pub tick: u64,
    pub bpm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub instrument: Instrument,
    pub notes: Vec<RawNote>,
}

/// A parsed score: timing maps plus one track per instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub ticks_per_quarter: u32,
    /// Sorted by tick; never empty (a missing tempo defaults to 120 BPM at 0).
    pub tempo_map: Vec<TempoEvent>,
    /// Sorted by tick; never empty (missing time signature defaults to 4/4 at 0).
    pub time_signatures: Vec<TimeSignature>,
    pub tracks: Vec<Track>,
}

impl Score {
    /// An empty score with the default 120 BPM / 4/4 maps.
    pub fn empty(ticks_per_quarter: u32) -> Score {
        Score {
            ticks_per_quarter,
            tempo_map: vec![TempoEvent { tick: 0, bpm: 120.0 }],
            time_signatures: vec![TimeSignature { tick: 0, numerator: 4, denominator: 4 }],
            tracks: Vec::new(),
        }
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(|t| t.notes.len()).sum()
    }

    pub fn non_drum_note_count(&self) -> usize {
        self.tracks
            .iter()
            .filter(|t| t.instrument != Instrument::Drums)
            .map(|t| t.notes.len())
            .sum()
    }

    /// True if every note in the score belongs to a drum track.
    pub fn is_drum_only(&self) -> bool {
        self.non_drum_note_count() == 0
    }

    /// Tempo in effect at `tick` (last event at or before it).
    pub fn tempo_at(&self, tick: u64) -> f64 {
        let mut bpm = self.tempo_map.first().map(|e| e.bpm).unwrap_or(120.0);
        for ev in &self.tempo_map {
            if ev.tick <= tick {
                bpm = ev.bpm;
            } else {
                break;
            }
        }
        bpm
    }
}
