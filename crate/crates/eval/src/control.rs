//! Attribute-control accuracy: compare generated pieces against the
//! references they were asked to follow (tempo, key, time signature,
//! instrumentation).

use std::collections::BTreeSet;

use cadenza_midi::score::{Instrument, Score};

use crate::{parallel_map, EvalError};

/// Tempo agreement window in BPM.
pub const TEMPO_TOLERANCE: f64 = 10.0;

/// Krumhansl-Kessler tone profiles used for key detection.
const MAJOR_PROFILE: [f64; 12] =
    [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
const MINOR_PROFILE: [f64; 12] =
    [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

/// A key as a tonic pitch class and a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Key {
    pub tonic: usize,
    pub major: bool,
}

impl Key {
    pub const C_MAJOR: Key = Key { tonic: 0, major: true };

    pub fn name(&self) -> String {
        const NAMES: [&str; 12] =
            ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
        format!("{} {}", NAMES[self.tonic], if self.major { "major" } else { "minor" })
    }
}

fn pearson(x: &[f64; 12], y: &[f64; 12]) -> f64 {
    let mx = x.iter().sum::<f64>() / 12.0;
    let my = y.iter().sum::<f64>() / 12.0;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..12 {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx).powi(2);
        dy += (y[i] - my).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        return f64::NEG_INFINITY;
    }
    num / (dx * dy).sqrt()
}

/// Detect the key from a duration-weighted pitch-class histogram by
/// profile correlation. A piece with no usable histogram (no pitched
/// notes, or a flat one) reports C major.
pub fn detect_key(score: &Score) -> Key {
    let mut weights = [0.0f64; 12];
    for track in &score.tracks {
        if track.instrument == Instrument::Drums {
            continue;
        }
        for n in &track.notes {
            weights[n.pitch as usize % 12] += n.duration_ticks as f64;
        }
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Key::C_MAJOR;
    }

    let mut best = (f64::NEG_INFINITY, Key::C_MAJOR);
    for (major, profile) in [(true, MAJOR_PROFILE), (false, MINOR_PROFILE)] {
        for tonic in 0..12 {
            let mut rotated = [0.0; 12];
            for i in 0..12 {
                rotated[(tonic + i) % 12] = profile[i];
            }
            let r = pearson(&weights, &rotated);
            if r > best.0 {
                best = (r, Key { tonic, major });
            }
        }
    }
    if best.0.is_finite() {
        best.1
    } else {
        Key::C_MAJOR
    }
}

/// What a generated piece was asked to match. `None` fields exclude the
/// piece from that metric.
#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub tempo_bpm: Option<f64>,
    pub key: Option<Key>,
    pub time_signature: Option<(u8, u8)>,
    pub instruments: Option<BTreeSet<Instrument>>,
}

/// Hit counts for one control metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ratio {
    pub hits: usize,
    pub evaluated: usize,
    /// Pieces left out because the reference lacked the field.
    pub excluded: usize,
}

impl Ratio {
    fn tally(&mut self, hit: Option<bool>) {
        match hit {
            Some(true) => {
                self.hits += 1;
                self.evaluated += 1;
            }
            Some(false) => self.evaluated += 1,
            None => self.excluded += 1,
        }
    }

    pub fn value(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.hits as f64 / self.evaluated as f64)
    }
}

/// The four control-accuracy ratios over an evaluation set.
#[derive(Debug, Clone, Default)]
pub struct ControlReport {
    pub tbt: Ratio,
    pub ck: Ratio,
    pub cts: Ratio,
    pub ci: Ratio,
}

/// Instruments that actually sound in a piece.
pub fn sounding_instruments(score: &Score) -> BTreeSet<Instrument> {
    score
        .tracks
        .iter()
        .filter(|t| !t.notes.is_empty())
        .map(|t| t.instrument)
        .collect()
}

struct PieceOutcome {
    tbt: Option<bool>,
    ck: Option<bool>,
    cts: Option<bool>,
    ci: Option<bool>,
}

/// Compare each generated piece against its reference. The generated
/// tempo and time signature are the ones in effect at the start of the
/// piece; the key is detected from the notes.
pub fn control_metrics(
    generated: &[Score],
    references: &[Reference],
) -> Result<ControlReport, EvalError> {
    if generated.len() != references.len() {
        return Err(EvalError::Input(format!(
            "{} generated pieces vs {} references",
            generated.len(),
            references.len()
        )));
    }
    let pairs: Vec<(&Score, &Reference)> = generated.iter().zip(references).collect();
    let outcomes = parallel_map(&pairs, |(score, reference)| PieceOutcome {
        tbt: reference
            .tempo_bpm
            .map(|want| (score.tempo_at(0) - want).abs() <= TEMPO_TOLERANCE),
        ck: reference.key.map(|want| detect_key(score) == want),
        cts: reference.time_signature.map(|(num, den)| {
            let ts = score.time_signatures[0];
            ts.numerator == num && ts.denominator == den
        }),
        ci: reference
            .instruments
            .as_ref()
            .map(|want| want.is_subset(&sounding_instruments(score))),
    });

    let mut report = ControlReport::default();
    for o in outcomes {
        report.tbt.tally(o.tbt);
        report.ck.tally(o.ck);
        report.cts.tally(o.cts);
        report.ci.tally(o.ci);
    }
    Ok(report)
}

/// One row per metric: hits, denominator, exclusions, and the ratio.
pub fn control_csv(report: &ControlReport) -> String {
    let mut out = String::from("metric,hits,evaluated,excluded,ratio\n");
    for (name, r) in
        [("tbt", report.tbt), ("ck", report.ck), ("cts", report.cts), ("ci", report.ci)]
    {
        let ratio = r.value().map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{name},{},{},{},{ratio}\n", r.hits, r.evaluated, r.excluded));
    }
    out
}
