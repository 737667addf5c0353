//! Training objectives: a contrastive loss that spreads pooled sequence
//! representations apart, a masked weighted cross-entropy over denoiser
//! logits, and their affine combination.

use cadenza_tensor::graph::{Graph, TensorId};

use crate::diffusion::MaskState;
use crate::ModelError;

/// Per-step objective values, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_cl: f64,
    pub l_ce: f64,
    /// Exactly `lambda * l_cl + l_ce`.
    pub total: f64,
    /// Mean weighted cross-entropy per attribute (same normalization as
    /// `l_ce`, which is their sum).
    pub per_attribute_ce: Vec<f64>,
    /// Unweighted mean of -log p(truth) over masked, non-padded attribute
    /// slots; the memorization metric.
    pub mean_masked_ce: f64,
    /// Number of masked slots the means run over.
    pub masked_slots: usize,
}

/// `lambda * l_cl + l_ce`.
pub fn total_loss(l_cl: f64, l_ce: f64, lambda: f64) -> f64 {
    lambda * l_cl + l_ce
}

fn check_latents(hs: &[Vec<f64>], tau: f64) -> Result<(), ModelError> {
    if hs.len() < 2 {
        return Err(ModelError::Loss(format!(
            "contrastive loss needs at least 2 samples, got {}",
            hs.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(ModelError::Loss(format!("temperature must be positive, got {tau}")));
    }
    // Non-finite inputs are allowed through: the NaN reaches the total,
    // where the trainer aborts with step diagnostics.
    for (i, h) in hs.iter().enumerate() {
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ModelError::Loss(format!("sample {i} has zero norm")));
        }
    }
    Ok(())
}

/// Contrastive loss over pooled latents, built into `g` for backward.
///
/// -log[ (1/(N(N-1))) sum over ordered pairs of exp(-(1 - cos(h_i, h_j)) / tau) ].
pub fn contrastive_loss_graph(
    g: &mut Graph,
    hs: &[TensorId],
    tau: f64,
) -> Result<TensorId, ModelError> {
    let values: Vec<Vec<f64>> = hs.iter().map(|&h| g.value(h).to_vec()).collect();
    check_latents(&values, tau)?;
    let n = hs.len();
    // Cosine is symmetric, so each unordered pair appears once and the mean
    // scales by 2 / (N (N-1)).
    let mut sum: Option<TensorId> = None;
    for i in 0..n {
        for j in i + 1..n {
            let c = g.cosine_sim(hs[i], hs[j]);
            let shifted = g.add_const(c, -1.0);
            let scaled = g.scale(shifted, 1.0 / tau);
            let e = g.exp(scaled);
            sum = Some(match sum {
                Some(prev) => g.add(prev, e),
                None => e,
            });
        }
    }
    let sum = sum.expect("n >= 2 gives at least one pair");
    let mean = g.scale(sum, 2.0 / (n * (n - 1)) as f64);
    let logged = g.log(mean);
    Ok(g.scale(logged, -1.0))
}

/// Independent scalar recomputation of the contrastive loss, for oracle
/// comparisons against the graph value.
pub fn contrastive_loss_value(hs: &[Vec<f64>], tau: f64) -> Result<f64, ModelError> {
    check_latents(hs, tau)?;
    let n = hs.len();
    let norm = |h: &[f64]| h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dot: f64 = hs[i].iter().zip(&hs[j]).map(|(a, b)| a * b).sum();
            let cos = dot / (norm(&hs[i]) * norm(&hs[j]));
            sum += (-(1.0 - cos) / tau).exp();
        }
    }
    Ok(-(sum / (n * (n - 1)) as f64).ln())
}

/// Per-note cross-entropy terms, kept for reporting.
#[derive(Debug, Clone, Default)]
pub struct CeTerms {
    /// Weighted `-log p(truth) / p_mask` per masked attribute, keyed by
    /// attribute index.
    pub weighted: Vec<(usize, f64)>,
    /// Unweighted `-log p(truth)` per masked attribute.
    pub unweighted: Vec<(usize, f64)>,
}

/// Masked weighted cross-entropy for one note, built into `g`.
///
/// Each masked attribute contributes `-(1 / p_mask) log p(truth)`; unmasked
/// (and clamped) attributes contribute exactly zero by never entering the
/// graph. Returns the scalar loss node plus the term values.
pub fn masked_weighted_ce_graph(
    g: &mut Graph,
    logits: &[TensorId],
    targets: &[usize],
    state: &MaskState,
) -> Result<(TensorId, CeTerms), ModelError> {
    let k = logits.len();
    if targets.len() != k || state.slots.len() != k {
        return Err(ModelError::Loss(format!(
            "{} logit rows, {} targets, {} mask slots",
            k,
            targets.len(),
            state.slots.len()
        )));
    }
    let mut terms = CeTerms::default();
    let mut sum: Option<TensorId> = None;
    for a in 0..k {
        if !state.is_masked(a) {
            continue;
        }
        if !(state.t > 0.0) {
            return Err(ModelError::Loss(format!(
                "attribute {a} is masked but p_mask is {}",
                state.t
            )));
        }
        let (_, width) = g.shape(logits[a]);
        if targets[a] >= width {
            return Err(ModelError::Loss(format!(
                "attribute {a}: target {} outside logit width {width}",
                targets[a]
            )));
        }
        let ls = g.log_softmax_rows(logits[a]);
        let picked = g.gather(ls, vec![(0, targets[a])]);
        let logp = g.scalar_value(picked);
        let term = g.scale(picked, -1.0 / state.t);
        terms.weighted.push((a, -logp / state.t));
        terms.unweighted.push((a, -logp));
        sum = Some(match sum {
            Some(prev) => g.add(prev, term),
            None => term,
        });
    }
    let node = match sum {
        Some(s) => s,
        None => g.input(1, 1, vec![0.0]),
    };
    Ok((node, terms))
}

/// Independent scalar recomputation of the masked weighted cross-entropy.
pub fn masked_weighted_ce_value(
    logits: &[Vec<f64>],
    targets: &[usize],
    state: &MaskState,
) -> Result<f64, ModelError> {
    let k = logits.len();
    if targets.len() != k || state.slots.len() != k {
        return Err(ModelError::Loss("mismatched lengths".into()));
    }
    let mut sum = 0.0;
    for a in 0..k {
        if !state.is_masked(a) {
            continue;
        }
        if !(state.t > 0.0) {
            return Err(ModelError::Loss(format!(
                "attribute {a} is masked but p_mask is {}",
                state.t
            )));
        }
        let row = &logits[a];
        if targets[a] >= row.len() {
            return Err(ModelError::Loss(format!("attribute {a}: target out of range")));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let logp = row[targets[a]] - lse;
        sum += -logp / state.t;
    }
    Ok(sum)
}
