//! Forward masking, the step-adjustable reverse schedule, and the parallel
//! attribute sampler with training-free clamping.
//!
//! A note's K attributes are recovered over T steps: each step predicts all
//! masked positions, commits the most confident ones according to the
//! schedule, and re-masks the rest. Clamped attributes are committed before
//! the first step and never change.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::net::SeqModel;
use crate::ModelError;

/// Per-attribute decode status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Recovered during decoding (or kept by the forward process).
    Committed(usize),
    /// Currently hidden behind the mask symbol.
    Masked,
    /// Fixed by the caller before decoding; never overwritten.
    Clamped(usize),
}

/// Status of all K attribute positions at one diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskState {
    pub slots: Vec<Slot>,
    /// Masking probability each slot was (or would be) masked with; doubles
    /// as the loss weight denominator.
    pub t: f64,
}

impl MaskState {
    pub fn masked_count(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Masked)).count()
    }

    pub fn is_masked(&self, k: usize) -> bool {
        matches!(self.slots[k], Slot::Masked)
    }

    /// Concrete token indices, with masked slots mapped to each
    /// attribute's mask index.
    pub fn indices(&self, mask_index: impl Fn(usize) -> usize) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .map(|(k, s)| match s {
                Slot::Committed(v) | Slot::Clamped(v) => *v,
                Slot::Masked => mask_index(k),
            })
            .collect()
    }

    /// Fully committed values; errors if anything is still masked.
    pub fn final_indices(&self) -> Result<Vec<usize>, ModelError> {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Committed(v) | Slot::Clamped(v) => Ok(*v),
                Slot::Masked => Err(ModelError::Schedule("decode left a masked slot".into())),
            })
            .collect()
    }
}

/// Independently mask each attribute with probability `t` (keep with
/// probability `1 - t`).
pub fn forward_mask(
    indices: &[usize],
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MaskState, ModelError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(ModelError::Time(t));
    }
    let slots = indices
        .iter()
        .map(|&v| {
            if rng.gen::<f64>() < t {
                Slot::Masked
            } else {
                Slot::Committed(v)
            }
        })
        .collect();
    Ok(MaskState { slots, t })
}

/// Number of positions to commit at step `s` of `steps` so that the counts
/// are as uniform as possible and sum to `num_m` exactly.
pub fn num_tokens_to_decode(num_m: usize, steps: usize, s: usize) -> Result<usize, ModelError> {
    if steps == 0 {
        return Err(ModelError::Schedule("steps must be at least 1".into()));
    }
    if s >= steps {
        return Err(ModelError::Schedule(format!("step index {s} out of {steps}")));
    }
    let base = num_m / steps;
    Ok(if s < num_m % steps { base + 1 } else { base })
}

/// How committed values are chosen from the predicted distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitMode {
    /// Most probable content token; fully deterministic.
    Argmax,
    /// Categorical draw over content tokens.
    Sample,
}

/// How the positions to commit each step are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnmaskRule {
    /// Highest predicted probability first (ties to the lowest attribute
    /// index). The primary sampler.
    Confidence,
    /// Uniformly random masked positions; reference sampler for A/B
    /// comparisons against confidence ranking.
    UniformRandom,
}

/// Sampler knobs shared by every note of a generation run.
#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    pub steps: usize,
    pub mode: CommitMode,
    pub rule: UnmaskRule,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { steps: 8, mode: CommitMode::Argmax, rule: UnmaskRule::Confidence }
    }
}

/// Predicts per-attribute logit rows for a masked token row at a diffusion
/// time. Implemented by the model; tests substitute fixtures.
pub trait Denoise {
    fn predict(&mut self, indices: &[usize], t: f64) -> Result<Vec<Vec<f64>>, ModelError>;
}

impl<F> Denoise for F
where
    F: FnMut(&[usize], f64) -> Result<Vec<Vec<f64>>, ModelError>,
{
    fn predict(&mut self, indices: &[usize], t: f64) -> Result<Vec<Vec<f64>>, ModelError> {
        self(indices, t)
    }
}

/// Softmax over the content prefix of one logit row (mask and pad logits
/// never compete for commitment).
fn content_probs(logits: &[f64], content: usize) -> Vec<f64> {
    let row = &logits[..content];
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn draw_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Decode one note's attributes in `opts.steps` denoiser calls.
///
/// `content_sizes[k]` is the content vocabulary size of attribute `k` (mask
/// index equals it). `clamps[k]` fixes attribute `k` before step 0; clamped
/// slots count as already committed, shrinking the schedule. Returns the
/// final content indices and the number of denoiser invocations. `observe`,
/// when given, sees the state after initialization and after every step.
pub fn decode_note(
    denoise: &mut dyn Denoise,
    content_sizes: &[usize],
    opts: &DecodeOptions,
    clamps: &[Option<usize>],
    rng: &mut ChaCha8Rng,
    mut observe: Option<&mut dyn FnMut(&MaskState)>,
) -> Result<(Vec<usize>, usize), ModelError> {
    let k = content_sizes.len();
    if clamps.len() != k {
        return Err(ModelError::Clamp(format!(
            "{} clamp slots for {k} attributes",
            clamps.len()
        )));
    }
    if opts.steps == 0 {
        return Err(ModelError::Schedule("steps must be at least 1".into()));
    }
    for (a, c) in clamps.iter().enumerate() {
        if let Some(v) = c {
            if *v >= content_sizes[a] {
                return Err(ModelError::Clamp(format!(
                    "attribute {a}: clamp value {v} outside content size {}",
                    content_sizes[a]
                )));
            }
        }
    }

    let slots: Vec<Slot> = clamps
        .iter()
        .map(|c| match c {
            Some(v) => Slot::Clamped(*v),
            None => Slot::Masked,
        })
        .collect();
    let mut state = MaskState { slots, t: 1.0 };
    let num_m = state.masked_count();
    if let Some(obs) = observe.as_deref_mut() {
        obs(&state);
    }

    let mut calls = 0;
    for s in 0..opts.steps {
        let t_s = (opts.steps - s) as f64 / opts.steps as f64;
        state.t = t_s;
        let commit_now = num_tokens_to_decode(num_m, opts.steps, s)?;
        let logits = denoise.predict(&state.indices(|a| content_sizes[a]), t_s)?;
        calls += 1;
        if logits.len() != k {
            return Err(ModelError::Vocab(format!(
                "denoiser returned {} rows for {k} attributes",
                logits.len()
            )));
        }

        // Candidate commitments for every still-masked position, visited in
        // attribute order so sampling draws are reproducible.
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for a in 0..k {
            if !state.is_masked(a) {
                continue;
            }
            let probs = content_probs(&logits[a], content_sizes[a]);
            let (choice, conf) = match opts.mode {
                CommitMode::Argmax => {
                    let (mut best, mut best_p) = (0, probs[0]);
                    for (i, &p) in probs.iter().enumerate().skip(1) {
                        if p > best_p {
                            best = i;
                            best_p = p;
                        }
                    }
                    (best, best_p)
                }
                CommitMode::Sample => {
                    let i = draw_categorical(&probs, rng);
                    (i, probs[i])
                }
            };
            candidates.push((a, choice, conf));
        }

        match opts.rule {
            UnmaskRule::Confidence => {
                // Stable ordering: higher confidence first, then lower
                // attribute index.
                candidates.sort_by(|x, y| y.2.partial_cmp(&x.2).unwrap().then(x.0.cmp(&y.0)));
            }
            UnmaskRule::UniformRandom => {
                for i in (1..candidates.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    candidates.swap(i, j);
                }
            }
        }
        for &(a, choice, _) in candidates.iter().take(commit_now) {
            state.slots[a] = Slot::Committed(choice);
        }
        if let Some(obs) = observe.as_deref_mut() {
            obs(&state);
        }
    }

    Ok((state.final_indices()?, calls))
}

/// Counters reported by [`generate_sequence`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerateStats {
    pub denoiser_calls: usize,
}

/// Autoregressively generate `n_notes` notes (prompt notes included), each
/// decoded by the parallel sampler under shared `clamps`.
///
/// The returned notes exclude the anchor. With [`CommitMode::Argmax`] and
/// [`UnmaskRule::Confidence`] the output is deterministic.
pub fn generate_sequence(
    model: &SeqModel,
    prefix: &[usize],
    prompt: &[Vec<usize>],
    n_notes: usize,
    opts: &DecodeOptions,
    clamps: &[Option<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<usize>>, GenerateStats), ModelError> {
    let k = model.config.k();
    if prompt.len() > n_notes {
        return Err(ModelError::Clamp(format!(
            "prompt of {} notes exceeds requested length {n_notes}",
            prompt.len()
        )));
    }
    let total_rows = prefix.len() + 1 + n_notes;
    if total_rows > model.config.m_max {
        return Err(ModelError::Overlength { len: total_rows, max: model.config.m_max });
    }
    let content: Vec<usize> = model.config.attr_sizes.clone();

    let mut history: Vec<Vec<usize>> = Vec::with_capacity(n_notes + 1);
    history.push(model.anchor_note());
    history.extend(prompt.iter().cloned());
    let mut stats = GenerateStats::default();

    while history.len() - 1 < n_notes {
        let zhat = model.next_latent(prefix, &history)?;
        let mut denoise = |indices: &[usize], t: f64| model.denoise_logits(indices, &zhat, t);
        let (note, calls) =
            decode_note(&mut denoise, &content, opts, clamps, rng, None)?;
        stats.denoiser_calls += calls;
        debug_assert_eq!(note.len(), k);
        history.push(note);
    }

    Ok((history.split_off(1), stats))
}
