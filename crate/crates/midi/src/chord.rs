//! Chord labeling over half-measure windows.
//!
//! Each window gets one of 37 labels: 12 major triads, 12 minor triads,
//! 12 dominant sevenths, or "N" when the window contains no non-drum
//! onsets. Detection correlates the window's pitch-class onset histogram
//! against binary chord templates.

use crate::grid::Grid;
use crate::meter::MeterMap;
use crate::score::{Instrument, Score};

pub const NOTE_NAMES: [&str; 12] =
    ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

const QUALITIES: [(&str, &[u8]); 3] =
    [("maj", &[0, 4, 7]), ("min", &[0, 3, 7]), ("7", &[0, 4, 7, 10])];

/// No-chord label used for windows without non-drum onsets.
pub const NO_CHORD: &str = "N";

/// All 37 chord symbols in template order, "N" first.
pub fn all_chord_symbols() -> Vec<String> {
    let mut out = vec![NO_CHORD.to_string()];
    for (quality, _) in QUALITIES {
        for root in NOTE_NAMES {
            out.push(format!("{root}:{quality}"));
        }
    }
    out
}

/// One labeled half-measure window, in grid steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChordSpan {
    pub start: u64,
    pub end: u64,
    pub label: String,
}

/// Sequence of labeled windows with step lookup.
#[derive(Debug, Clone)]
pub struct ChordMap {
    spans: Vec<ChordSpan>,
}

impl ChordMap {
    pub fn spans(&self) -> &[ChordSpan] {
        &self.spans
    }

    /// Label of the window containing a grid step. Steps past the last
    /// window reuse its label.
    pub fn label_at(&self, step: u64) -> &str {
        if self.spans.is_empty() {
            return NO_CHORD;
        }
        let idx = match self.spans.binary_search_by_key(&step, |s| s.start) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        &self.spans[idx].label
    }
}

fn pearson(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let ma = a.iter().sum::<f64>() / 12.0;
    let mb = b.iter().sum::<f64>() / 12.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..12 {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn best_template(hist: &[f64; 12]) -> String {
    let mut best_label = String::new();
    let mut best_r = f64::NEG_INFINITY;
    for (quality, intervals) in QUALITIES {
        for (root, root_name) in NOTE_NAMES.iter().enumerate() {
            let mut template = [0.0f64; 12];
            for &iv in intervals {
                template[(root + iv as usize) % 12] = 1.0;
            }
            let r = pearson(hist, &template);
            if r > best_r {
                best_r = r;
                best_label = format!("{root_name}:{quality}");
            }
        }
    }
    best_label
}

/// Label every half-measure window covering the score's onsets.
pub fn detect_chords(score: &Score, grid: Grid) -> ChordMap {
    let last_step = score
        .tracks
        .iter()
        .flat_map(|t| t.notes.iter())
        .map(|n| grid.step_of_tick(n.onset_tick))
        .max()
        .unwrap_or(0);
    let meter = MeterMap::build(score, grid, last_step);

    // Onset steps of non-drum notes, one histogram entry per onset.
    let mut onsets: Vec<(u64, u8)> = Vec::new();
    for track in &score.tracks {
        if track.instrument == Instrument::Drums {
            continue;
        }
        for note in &track.notes {
            onsets.push((grid.step_of_tick(note.onset_tick), note.pitch % 12));
        }
    }
    onsets.sort_unstable();

    let mut windows: Vec<(u64, u64)> = Vec::new();
    for span in meter.spans() {
        if span.len >= 2 {
            let mid = span.start + span.len / 2;
            windows.push((span.start, mid));
            windows.push((mid, span.start + span.len));
        } else {
            windows.push((span.start, span.start + span.len));
        }
    }

    let mut spans = Vec::with_capacity(windows.len());
    for (start, end) in windows {
        let mut hist = [0.0f64; 12];
        let mut any = false;
        let from = onsets.partition_point(|&(s, _)| s < start);
        for &(s, pc) in &onsets[from..] {
            if s >= end {
                break;
            }
            hist[pc as usize] += 1.0;
            any = true;
        }
        let label = if any { best_template(&hist) } else { NO_CHORD.to_string() };
        spans.push(ChordSpan { start, end, label });
    }
    ChordMap { spans }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{RawNote, Track};

    fn score_with_pitches(pitches: &[u8]) -> Score {
        let mut s = Score::empty(480);
        s.tracks.push(Track {
            instrument: Instrument::Program(0),
            notes: pitches
                .iter()
                .map(|&p| RawNote { onset_tick: 0, pitch: p, duration_ticks: 240, velocity: 80 })
                .collect(),
        });
        s
    }

    #[test]
    fn thirty_seven_symbols() {
        let symbols = all_chord_symbols();
        assert_eq!(symbols.len(), 37);
        assert_eq!(symbols[0], "N");
        let unique: std::collections::BTreeSet<_> = symbols.iter().collect();
        assert_eq!(unique.len(), 37);
    }

    #[test]
    fn major_triad_detected() {
        let map = detect_chords(&score_with_pitches(&[60, 64, 67]), Grid::new(480));
        assert_eq!(map.label_at(0), "C:maj");
    }

    #[test]
    fn minor_triad_detected() {
        let map = detect_chords(&score_with_pitches(&[57, 60, 64]), Grid::new(480));
        assert_eq!(map.label_at(0), "A:min");
    }

    #[test]
    fn dominant_seventh_outranks_plain_triad() {
        let map = detect_chords(&score_with_pitches(&[60, 64, 67, 70]), Grid::new(480));
        assert_eq!(map.label_at(0), "C:7");
    }

    #[test]
    fn empty_window_is_no_chord() {
        // Notes only in the second half of the measure (step 24 = tick 960).
        let mut s = Score::empty(480);
        s.tracks.push(Track {
            instrument: Instrument::Program(0),
            notes: vec![RawNote { onset_tick: 960, pitch: 60, duration_ticks: 240, velocity: 80 }],
        });
        let map = detect_chords(&s, Grid::new(480));
        assert_eq!(map.label_at(0), "N");
        assert_eq!(map.label_at(24), "C:maj");
    }

    #[test]
    fn drum_notes_do_not_vote() {
        let mut s = Score::empty(480);
        s.tracks.push(Track {
            instrument: Instrument::Drums,
            notes: vec![RawNote { onset_tick: 0, pitch: 36, duration_ticks: 240, velocity: 100 }],
        });
        let map = detect_chords(&s, Grid::new(480));
        assert_eq!(map.label_at(0), "N");
    }

    #[test]
    fn windows_halve_each_measure() {
        let map = detect_chords(&score_with_pitches(&[60]), Grid::new(480));
        assert_eq!(map.spans()[0].start, 0);
        assert_eq!(map.spans()[0].end, 24);
    }
}
