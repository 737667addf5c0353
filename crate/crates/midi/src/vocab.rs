//! Attribute definitions and the symbol↔index tables used to encode
//! notes.
//!
//! Every attribute has a fixed, finite bin set, so the vocabulary does
//! not depend on corpus contents: building it twice always yields
//! byte-identical tables. Each table reserves two extra indices past the
//! content symbols, one for the mask token and one for padding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chord::all_chord_symbols;
use crate::grid::{
    duration_bin, duration_steps, tempo_bin, tempo_bpm, velocity_bin, velocity_value,
    BEAT_POSITIONS, DURATION_BINS, TEMPO_BINS, VELOCITY_BINS,
};
use crate::score::Instrument;
use crate::MidiError;

/// Number of attributes per note.
pub const K: usize = 8;

/// The per-note attributes, in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    Type,
    Beat,
    Chord,
    Tempo,
    Instrument,
    Pitch,
    Duration,
    Velocity,
}

impl Attribute {
    pub const ALL: [Attribute; K] = [
        Attribute::Type,
        Attribute::Beat,
        Attribute::Chord,
        Attribute::Tempo,
        Attribute::Instrument,
        Attribute::Pitch,
        Attribute::Duration,
        Attribute::Velocity,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Type => "type",
            Attribute::Beat => "beat",
            Attribute::Chord => "chord",
            Attribute::Tempo => "tempo",
            Attribute::Instrument => "instrument",
            Attribute::Pitch => "pitch",
            Attribute::Duration => "duration",
            Attribute::Velocity => "velocity",
        }
    }

    pub fn from_name(name: &str) -> Option<Attribute> {
        let lower = name.to_ascii_lowercase();
        Attribute::ALL.iter().copied().find(|a| a.name() == lower)
    }
}

/// Note type symbols, in sorted (index) order.
pub const TYPE_CONTINUATION: &str = "CONTINUATION";
pub const TYPE_NEW_BEAT: &str = "NEW_BEAT";
pub const TYPE_NEW_MEASURE: &str = "NEW_MEASURE";

/// General MIDI program names, one per program number.
pub const INSTRUMENT_NAMES: [&str; 128] = [
    "Piano",
    "Bright Acoustic Piano",
    "Electric Grand Piano",
    "Honky-tonk Piano",
    "Electric Piano 1",
    "Electric Piano 2",
    "Harpsichord",
    "Clavinet",
    "Celesta",
    "Glockenspiel",
    "Music Box",
    "Vibraphone",
    "Marimba",
    "Xylophone",
    "Tubular Bells",
    "Dulcimer",
    "Drawbar Organ",
    "Percussive Organ",
    "Rock Organ",
    "Church Organ",
    "Reed Organ",
    "Accordion",
    "Harmonica",
    "Tango Accordion",
    "Acoustic Guitar (nylon)",
    "Acoustic Guitar (steel)",
    "Electric Guitar (jazz)",
    "Electric Guitar (clean)",
    "Electric Guitar (muted)",
    "Overdriven Guitar",
    "Distortion Guitar",
    "Guitar Harmonics",
    "Acoustic Bass",
    "Electric Bass (finger)",
    "Electric Bass (pick)",
    "Fretless Bass",
    "Slap Bass 1",
    "Slap Bass 2",
    "Synth Bass 1",
    "Synth Bass 2",
    "Violin",
    "Viola",
    "Cello",
    "Contrabass",
    "Tremolo Strings",
    "Pizzicato Strings",
    "Orchestral Harp",
    "Timpani",
    "String Ensemble 1",
    "String Ensemble 2",
    "Synth Strings 1",
    "Synth Strings 2",
    "Choir Aahs",
    "Voice Oohs",
    "Synth Voice",
    "Orchestra Hit",
    "Trumpet",
    "Trombone",
    "Tuba",
    "Muted Trumpet",
    "French Horn",
    "Brass Section",
    "Synth Brass 1",
    "Synth Brass 2",
    "Soprano Sax",
    "Alto Sax",
    "Tenor Sax",
    "Baritone Sax",
    "Oboe",
    "English Horn",
    "Bassoon",
    "Clarinet",
    "Piccolo",
    "Flute",
    "Recorder",
    "Pan Flute",
    "Blown Bottle",
    "Shakuhachi",
    "Whistle",
    "Ocarina",
    "Lead 1 (square)",
    "Lead 2 (sawtooth)",
    "Lead 3 (calliope)",
    "Lead 4 (chiff)",
    "Lead 5 (charang)",
    "Lead 6 (voice)",
    "Lead 7 (fifths)",
    "Lead 8 (bass + lead)",
    "Pad 1 (new age)",
    "Pad 2 (warm)",
    "Pad 3 (polysynth)",
    "Pad 4 (choir)",
    "Pad 5 (bowed)",
    "Pad 6 (metallic)",
    "Pad 7 (halo)",
    "Pad 8 (sweep)",
    "FX 1 (rain)",
    "FX 2 (soundtrack)",
    "FX 3 (crystal)",
    "FX 4 (atmosphere)",
    "FX 5 (brightness)",
    "FX 6 (goblins)",
    "FX 7 (echoes)",
    "FX 8 (sci-fi)",
    "Sitar",
    "Banjo",
    "Shamisen",
    "Koto",
    "Kalimba",
    "Bag pipe",
    "Fiddle",
    "Shanai",
    "Tinkle Bell",
    "Agogo",
    "Steel Drums",
    "Woodblock",
    "Taiko Drum",
    "Melodic Tom",
    "Synth Drum",
    "Reverse Cymbal",
    "Guitar Fret Noise",
    "Breath Noise",
    "Seashore",
    "Bird Tweet",
    "Telephone Ring",
    "Helicopter",
    "Applause",
    "Gunshot",
];

const DRUMS_NAME: &str = "Drums";

/// Display name for an instrument.
pub fn instrument_symbol(instrument: Instrument) -> &'static str {
    match instrument {
        Instrument::Program(p) => INSTRUMENT_NAMES[(p as usize).min(127)],
        Instrument::Drums => DRUMS_NAME,
    }
}

/// Instrument for a display name (case-insensitive).
pub fn instrument_from_symbol(symbol: &str) -> Option<Instrument> {
    if symbol.eq_ignore_ascii_case(DRUMS_NAME) {
        return Some(Instrument::Drums);
    }
    INSTRUMENT_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(symbol))
        .map(|p| Instrument::Program(p as u8))
}

/// One note in token space: an index per attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoteTokens {
    pub indices: [usize; K],
}

impl NoteTokens {
    /// The all-zero row used as the fixed first note of every sequence.
    pub fn zero() -> Self {
        NoteTokens { indices: [0; K] }
    }

    pub fn get(&self, attr: Attribute) -> usize {
        self.indices[attr.index()]
    }

    pub fn set(&mut self, attr: Attribute, index: usize) {
        self.indices[attr.index()] = index;
    }
}

/// Symbol table for one attribute: sorted content symbols plus reserved
/// mask and pad indices directly after them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabTable {
    symbols: Vec<String>,
    by_symbol: BTreeMap<String, usize>,
}

impl VocabTable {
    fn new(mut symbols: Vec<String>) -> Self {
        symbols.sort();
        let by_symbol = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        VocabTable { symbols, by_symbol }
    }

    /// Number of content symbols.
    pub fn content_len(&self) -> usize {
        self.symbols.len()
    }

    pub fn mask_index(&self) -> usize {
        self.symbols.len()
    }

    pub fn pad_index(&self) -> usize {
        self.symbols.len() + 1
    }

    /// Table size including mask and pad.
    pub fn total_len(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.by_symbol.get(symbol).copied()
    }

    /// Case-insensitive lookup.
    pub fn index_of_ci(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s.eq_ignore_ascii_case(symbol))
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(|s| s.as_str())
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// The full per-attribute vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeVocab {
    tables: [VocabTable; K],
}

fn zero_padded(range: std::ops::Range<usize>) -> Vec<String> {
    range.map(|v| format!("{v:03}")).collect()
}

impl AttributeVocab {
    /// The canonical vocabulary. Attribute bin sets are fixed, so this
    /// is the vocabulary for every corpus.
    pub fn canonical() -> Self {
        let type_syms = vec![
            TYPE_CONTINUATION.to_string(),
            TYPE_NEW_BEAT.to_string(),
            TYPE_NEW_MEASURE.to_string(),
        ];
        let beat_syms = zero_padded(0..BEAT_POSITIONS);
        let chord_syms = all_chord_symbols();
        let tempo_syms = (0..TEMPO_BINS).map(|b| format!("{:06.2}", tempo_bpm(b))).collect();
        let mut inst_syms: Vec<String> =
            INSTRUMENT_NAMES.iter().map(|s| s.to_string()).collect();
        inst_syms.push(DRUMS_NAME.to_string());
        let pitch_syms = zero_padded(0..128);
        let dur_syms =
            (0..DURATION_BINS).map(|b| format!("{:03}", duration_steps(b))).collect();
        let vel_syms =
            (0..VELOCITY_BINS).map(|b| format!("{:03}", velocity_value(b))).collect();

        AttributeVocab {
            tables: [
                VocabTable::new(type_syms),
                VocabTable::new(beat_syms),
                VocabTable::new(chord_syms),
                VocabTable::new(tempo_syms),
                VocabTable::new(inst_syms),
                VocabTable::new(pitch_syms),
                VocabTable::new(dur_syms),
                VocabTable::new(vel_syms),
            ],
        }
    }

    pub fn table(&self, attr: Attribute) -> &VocabTable {
        &self.tables[attr.index()]
    }

    /// Content sizes per attribute, in attribute order.
    pub fn content_sizes(&self) -> [usize; K] {
        let mut out = [0; K];
        for (i, t) in self.tables.iter().enumerate() {
            out[i] = t.content_len();
        }
        out
    }

    /// Table sizes including mask and pad, in attribute order.
    pub fn total_sizes(&self) -> [usize; K] {
        let mut out = [0; K];
        for (i, t) in self.tables.iter().enumerate() {
            out[i] = t.total_len();
        }
        out
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            k: K,
            attributes: Attribute::ALL
                .iter()
                .map(|&a| VocabFileEntry {
                    name: a.name().to_string(),
                    symbols: self.table(a).symbols().to_vec(),
                    mask_index: self.table(a).mask_index(),
                    pad_index: self.table(a).pad_index(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, MidiError> {
        let file: VocabFile =
            serde_json::from_str(json).map_err(|e| MidiError::Vocab(e.to_string()))?;
        if file.k != K {
            return Err(MidiError::Vocab(format!("expected k = {K}, found {}", file.k)));
        }
        if file.attributes.len() != K {
            return Err(MidiError::Vocab(format!(
                "expected {K} attribute tables, found {}",
                file.attributes.len()
            )));
        }
        let mut tables = Vec::with_capacity(K);
        for (attr, entry) in Attribute::ALL.iter().zip(&file.attributes) {
            if entry.name != attr.name() {
                return Err(MidiError::Vocab(format!(
                    "attribute {} out of order (expected {})",
                    entry.name,
                    attr.name()
                )));
            }
            let mut sorted = entry.symbols.clone();
            sorted.sort();
            sorted.dedup();
            if sorted != entry.symbols {
                return Err(MidiError::Vocab(format!(
                    "symbols for {} are not sorted and unique",
                    entry.name
                )));
            }
            if entry.mask_index != entry.symbols.len()
                || entry.pad_index != entry.symbols.len() + 1
            {
                return Err(MidiError::Vocab(format!(
                    "mask/pad indices for {} do not follow the content symbols",
                    entry.name
                )));
            }
            tables.push(VocabTable::new(entry.symbols.clone()));
        }
        Ok(AttributeVocab { tables: tables.try_into().expect("checked length") })
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    k: usize,
    attributes: Vec<VocabFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct VocabFileEntry {
    name: String,
    symbols: Vec<String>,
    mask_index: usize,
    pad_index: usize,
}

/// Convert a clamp value given in natural units ("Piano", "125", "62")
/// to a content index for its attribute.
pub fn parse_clamp_value(
    attr: Attribute,
    raw: &str,
    vocab: &AttributeVocab,
) -> Result<usize, String> {
    let table = vocab.table(attr);
    let value = raw.trim();
    if let Some(idx) = table.index_of_ci(value) {
        return Ok(idx);
    }
    let numeric = value.parse::<f64>();
    let symbol: Option<String> = match attr {
        Attribute::Type | Attribute::Chord => None,
        Attribute::Beat => numeric
            .ok()
            .filter(|v| *v >= 0.0 && *v < BEAT_POSITIONS as f64)
            .map(|v| format!("{:03}", v as usize)),
        Attribute::Tempo => numeric
            .ok()
            .filter(|v| *v > 0.0)
            .map(|v| format!("{:06.2}", tempo_bpm(tempo_bin(v)))),
        Attribute::Instrument => numeric
            .ok()
            .filter(|v| *v >= 0.0)
            .and_then(|v| Instrument::from_id(v as usize))
            .map(|i| instrument_symbol(i).to_string()),
        Attribute::Pitch => numeric
            .ok()
            .filter(|v| *v >= 0.0 && *v < 128.0)
            .map(|v| format!("{:03}", v as usize)),
        Attribute::Duration => numeric
            .ok()
            .filter(|v| *v >= 1.0)
            .map(|v| format!("{:03}", duration_steps(duration_bin(v as u64)))),
        Attribute::Velocity => numeric
            .ok()
            .filter(|v| *v >= 0.0 && *v < 128.0)
            .map(|v| format!("{:03}", velocity_value(velocity_bin(v as u8)))),
    };
    if let Some(sym) = symbol {
        if let Some(idx) = table.index_of(&sym) {
            return Ok(idx);
        }
    }
    // Last resort for instruments: a unique case-insensitive substring.
    if attr == Attribute::Instrument {
        let lower = value.to_ascii_lowercase();
        let hits: Vec<usize> = (0..table.content_len())
            .filter(|&i| table.symbol(i).unwrap().to_ascii_lowercase().contains(&lower))
            .collect();
        match hits.len() {
            1 => return Ok(hits[0]),
            n if n > 1 => {
                return Err(format!(
                    "instrument '{value}' is ambiguous ({n} matches; use the full name)"
                ))
            }
            _ => {}
        }
    }
    Err(format!("no {} symbol matches '{value}'", attr.name()))
}
