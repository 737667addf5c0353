//! Empirical dependency analysis between note attributes: plug-in mutual
//! information, normalized MI over the geometric mean of marginal
//! entropies, and conditional entropies, all in nats.

use std::collections::BTreeMap;

use cadenza_midi::vocab::{Attribute, NoteTokens, K};

use crate::{parallel_map, EvalError};

/// Attribute order used for every matrix and report.
pub const ANALYSIS_ORDER: [Attribute; K] = [
    Attribute::Beat,
    Attribute::Pitch,
    Attribute::Velocity,
    Attribute::Duration,
    Attribute::Instrument,
    Attribute::Chord,
    Attribute::Tempo,
    Attribute::Type,
];

/// Column/row headers, matching [`ANALYSIS_ORDER`].
pub const ANALYSIS_LABELS: [&str; K] =
    ["Beat", "Pitch", "Velocity", "Duration", "Instrument", "Chord", "Tempo", "Type"];

/// Index into the packed upper-triangle pair list for i < j.
fn pair_idx(i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < K);
    i * K - i * (i + 1) / 2 + (j - i - 1)
}

const PAIRS: usize = K * (K - 1) / 2;

struct Counts {
    n: u64,
    marginal: Vec<BTreeMap<usize, u64>>,
    joint: Vec<BTreeMap<(usize, usize), u64>>,
}

impl Counts {
    fn new() -> Self {
        Counts {
            n: 0,
            marginal: vec![BTreeMap::new(); K],
            joint: vec![BTreeMap::new(); PAIRS],
        }
    }

    fn add_note(&mut self, note: &NoteTokens) {
        self.n += 1;
        let vals: Vec<usize> = ANALYSIS_ORDER.iter().map(|a| note.indices[a.index()]).collect();
        for i in 0..K {
            *self.marginal[i].entry(vals[i]).or_insert(0) += 1;
            for j in i + 1..K {
                *self.joint[pair_idx(i, j)].entry((vals[i], vals[j])).or_insert(0) += 1;
            }
        }
    }

    fn merge(&mut self, other: Counts) {
        self.n += other.n;
        for (mine, theirs) in self.marginal.iter_mut().zip(other.marginal) {
            for (k, v) in theirs {
                *mine.entry(k).or_insert(0) += v;
            }
        }
        for (mine, theirs) in self.joint.iter_mut().zip(other.joint) {
            for (k, v) in theirs {
                *mine.entry(k).or_insert(0) += v;
            }
        }
    }
}

fn entropy_nats(counts: &BTreeMap<usize, u64>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Pull values back to the unit interval when they overshoot by rounding;
/// genuine violations stay visible.
fn snap_unit(v: f64) -> f64 {
    if v < 0.0 && v > -1e-12 {
        0.0
    } else if v > 1.0 && v < 1.0 + 1e-12 {
        1.0
    } else {
        v
    }
}

/// Dependency matrices over the K note attributes, in [`ANALYSIS_ORDER`].
#[derive(Debug, Clone)]
pub struct MiMatrices {
    pub labels: [&'static str; K],
    /// Marginal entropies H(X), nats.
    pub entropy: [f64; K],
    /// Mutual information I(X;Y), nats; symmetric, diagonal I(X;X).
    pub mi: Vec<Vec<f64>>,
    /// I(X;Y) / sqrt(H(X) H(Y)); rows of constant attributes use the 0/0
    /// convention (1 on the diagonal, 0 elsewhere).
    pub nmi: Vec<Vec<f64>>,
    /// cond[i][j] = H(X_i | X_j) = H(X_i) - I(X_i; X_j), nats.
    pub cond: Vec<Vec<f64>>,
    /// Labels of attributes with zero entropy (the 0/0 convention applied).
    pub constant: Vec<&'static str>,
    pub notes_counted: u64,
}

/// Analyze a tokenized corpus. The first note of every sequence is the
/// fixed all-zero opener and is skipped; at least one countable note is
/// required.
pub fn mutual_information_analysis(seqs: &[Vec<NoteTokens>]) -> Result<MiMatrices, EvalError> {
    let workers = std::thread::available_parallelism().map(usize::from).unwrap_or(1);
    let chunks: Vec<&[Vec<NoteTokens>]> =
        seqs.chunks(seqs.len().div_ceil(workers).max(1)).collect();
    let partials = parallel_map(&chunks, |chunk| {
        let mut c = Counts::new();
        for seq in *chunk {
            for note in seq.iter().skip(1) {
                c.add_note(note);
            }
        }
        c
    });
    let mut counts = Counts::new();
    for p in partials {
        counts.merge(p);
    }
    if counts.n == 0 {
        return Err(EvalError::Input(
            "no countable notes (sequences hold only their opener)".into(),
        ));
    }

    let n = counts.n as f64;
    let mut entropy = [0.0; K];
    for i in 0..K {
        entropy[i] = entropy_nats(&counts.marginal[i], n);
    }

    let mut mi = vec![vec![0.0; K]; K];
    for i in 0..K {
        // The diagonal runs through the same plug-in formula with the
        // degenerate joint p(x,x) = p(x), rather than copying H(X).
        mi[i][i] = counts.marginal[i]
            .values()
            .map(|&c| {
                let (pxy, px, py) = (c as f64 / n, c as f64 / n, c as f64 / n);
                pxy * (pxy.ln() - px.ln() - py.ln())
            })
            .sum();
        for j in i + 1..K {
            let value: f64 = counts.joint[pair_idx(i, j)]
                .iter()
                .map(|(&(x, y), &c)| {
                    let pxy = c as f64 / n;
                    let px = counts.marginal[i][&x] as f64 / n;
                    let py = counts.marginal[j][&y] as f64 / n;
                    pxy * (pxy.ln() - px.ln() - py.ln())
                })
                .sum();
            mi[i][j] = value;
            mi[j][i] = value;
        }
    }

    let mut nmi = vec![vec![0.0; K]; K];
    let mut cond = vec![vec![0.0; K]; K];
    for i in 0..K {
        for j in 0..K {
            nmi[i][j] = if entropy[i] == 0.0 || entropy[j] == 0.0 {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else {
                snap_unit(mi[i][j] / (entropy[i] * entropy[j]).sqrt())
            };
            cond[i][j] = entropy[i] - mi[i][j];
        }
    }

    let constant = (0..K).filter(|&i| entropy[i] == 0.0).map(|i| ANALYSIS_LABELS[i]).collect();
    Ok(MiMatrices {
        labels: ANALYSIS_LABELS,
        entropy,
        mi,
        nmi,
        cond,
        constant,
        notes_counted: counts.n,
    })
}

fn matrix_csv(corner: &str, labels: &[&str], m: &[Vec<f64>]) -> String {
    let mut out = format!("{corner},{}\n", labels.join(","));
    for (label, row) in labels.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    out
}

impl MiMatrices {
    pub fn mi_csv(&self) -> String {
        matrix_csv("mi_nats", &self.labels, &self.mi)
    }

    pub fn nmi_csv(&self) -> String {
        matrix_csv("nmi", &self.labels, &self.nmi)
    }

    pub fn cond_csv(&self) -> String {
        matrix_csv("cond_entropy_nats_row_given_col", &self.labels, &self.cond)
    }

    pub fn entropy_csv(&self) -> String {
        let mut out = String::from("attribute,entropy_nats\n");
        for (label, h) in self.labels.iter().zip(&self.entropy) {
            out.push_str(&format!("{label},{h:.6}\n"));
        }
        out
    }
}
