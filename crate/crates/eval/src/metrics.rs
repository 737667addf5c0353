//! Per-piece quality metrics: how well pitches fit a scale and how spread
//! the pitch and pitch-class distributions are.
//!
//! Drum tracks carry percussion codes, not pitches, so all three metrics
//! look at pitched notes only; a drum-only piece is skipped, not scored.

use cadenza_midi::score::{Instrument, Score};

use crate::parallel_map;

/// Interval patterns of the two diatonic modes used for scale matching.
const MAJOR_STEPS: [usize; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_STEPS: [usize; 7] = [0, 2, 3, 5, 7, 8, 10];

/// All 24 candidate scales as pitch-class membership masks, majors first,
/// roots ascending within each mode.
pub fn scale_masks() -> Vec<[bool; 12]> {
    let mut masks = Vec::with_capacity(24);
    for steps in [MAJOR_STEPS, MINOR_STEPS] {
        for root in 0..12 {
            let mut mask = [false; 12];
            for s in steps {
                mask[(root + s) % 12] = true;
            }
            masks.push(mask);
        }
    }
    masks
}

fn pitched_notes(score: &Score) -> impl Iterator<Item = u8> + '_ {
    score
        .tracks
        .iter()
        .filter(|t| t.instrument != Instrument::Drums)
        .flat_map(|t| t.notes.iter().map(|n| n.pitch))
}

/// Largest fraction of pitched notes whose pitch classes lie inside any of
/// the 24 diatonic scales. `None` when the piece has no pitched notes.
pub fn scale_consistency(score: &Score) -> Option<f64> {
    let mut class_counts = [0usize; 12];
    let mut total = 0usize;
    for pitch in pitched_notes(score) {
        class_counts[pitch as usize % 12] += 1;
        total += 1;
    }
    if total == 0 {
        return None;
    }
    let best = scale_masks()
        .iter()
        .map(|mask| {
            class_counts
                .iter()
                .zip(mask)
                .filter(|(_, inside)| **inside)
                .map(|(c, _)| *c)
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0);
    Some(best as f64 / total as f64)
}

fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Base-2 Shannon entropy of the pitch (0-127) histogram over pitched
/// notes. `None` when the piece has no pitched notes.
pub fn pitch_entropy(score: &Score) -> Option<f64> {
    let mut counts = [0usize; 128];
    let mut total = 0usize;
    for pitch in pitched_notes(score) {
        counts[pitch as usize] += 1;
        total += 1;
    }
    (total > 0).then(|| entropy_bits(&counts))
}

/// Base-2 Shannon entropy of the pitch-class (0-11) histogram over pitched
/// notes. `None` when the piece has no pitched notes.
pub fn pitch_class_entropy(score: &Score) -> Option<f64> {
    let mut counts = [0usize; 12];
    let mut total = 0usize;
    for pitch in pitched_notes(score) {
        counts[pitch as usize % 12] += 1;
        total += 1;
    }
    (total > 0).then(|| entropy_bits(&counts))
}

/// Quality metrics of one piece; a `None` field means the piece was
/// skipped for that metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PieceMetrics {
    pub sc: Option<f64>,
    pub pe: Option<f64>,
    pub pce: Option<f64>,
}

/// Corpus-level metric summary.
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub pieces: Vec<PieceMetrics>,
    pub mean_sc: Option<f64>,
    pub mean_pe: Option<f64>,
    pub mean_pce: Option<f64>,
    /// Pieces skipped per metric (no pitched notes).
    pub skipped: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Score every piece in parallel and average whatever was scorable.
pub fn quality_metrics(scores: &[Score]) -> QualityReport {
    let pieces = parallel_map(scores, |s| PieceMetrics {
        sc: scale_consistency(s),
        pe: pitch_entropy(s),
        pce: pitch_class_entropy(s),
    });
    QualityReport {
        mean_sc: mean(pieces.iter().filter_map(|p| p.sc)),
        mean_pe: mean(pieces.iter().filter_map(|p| p.pe)),
        mean_pce: mean(pieces.iter().filter_map(|p| p.pce)),
        skipped: pieces.iter().filter(|p| p.sc.is_none()).count(),
        pieces,
    }
}

/// Per-piece CSV with a trailing corpus-mean row. Entropies are labeled
/// with their base; skipped metrics stay empty.
pub fn quality_csv(report: &QualityReport, names: &[String]) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("piece,sc,pe_bits,pce_bits\n");
    for (name, p) in names.iter().zip(&report.pieces) {
        out.push_str(&format!("{name},{},{},{}\n", cell(p.sc), cell(p.pe), cell(p.pce)));
    }
    out.push_str(&format!(
        "mean,{},{},{}\n",
        cell(report.mean_sc),
        cell(report.mean_pe),
        cell(report.mean_pce)
    ));
    out
}
