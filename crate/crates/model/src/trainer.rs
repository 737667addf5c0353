//! Desk-scale teacher-forced training: the generator reads ground-truth
//! histories, each next-note latent conditions the denoiser, and the
//! denoiser recovers forward-masked attributes.
//!
//! One optimizer step builds a single graph over the whole batch (both
//! losses included), runs one backward pass, clips the global gradient
//! norm, and applies a decoupled-weight-decay adaptive-moment update.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use cadenza_tensor::checkpoint::{self, TensorOut};
use cadenza_tensor::graph::{Gradients, Graph, TensorId};
use cadenza_tensor::store::ParamId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::diffusion::{forward_mask, MaskState};
use crate::losses;
use crate::losses::LossBreakdown;
use crate::net::SeqModel;
use crate::ModelError;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Forward-mask draws for one batch: per sequence, one state per target
/// note (positions 1..len). Kept separate from the graph build so the same
/// draws can be replayed, e.g. for finite-difference checks.
pub type BatchNoise = Vec<Vec<MaskState>>;

/// Draw a time in (0, 1] and a mask pattern for every target note.
pub fn sample_batch_noise(
    batch: &[Vec<Vec<usize>>],
    rng: &mut ChaCha8Rng,
) -> Result<BatchNoise, ModelError> {
    batch
        .iter()
        .map(|seq| {
            (1..seq.len())
                .map(|j| {
                    let t = 1.0 - rng.gen::<f64>();
                    forward_mask(&seq[j], t, rng)
                })
                .collect()
        })
        .collect()
}

struct BuiltBatch {
    graph: Graph,
    total: TensorId,
    breakdown: LossBreakdown,
}

/// Build the full training graph for one batch.
///
/// Sequences are padded to the batch maximum with pad indices; padded rows
/// are embedded and run through the generator but excluded from pooling and
/// from every loss term.
fn build_batch(
    model: &SeqModel,
    batch: &[Vec<Vec<usize>>],
    noise: &BatchNoise,
) -> Result<BuiltBatch, ModelError> {
    if batch.len() < 2 {
        return Err(ModelError::Loss(format!(
            "a batch needs at least 2 sequences for the contrastive term, got {}",
            batch.len()
        )));
    }
    if noise.len() != batch.len() {
        return Err(ModelError::Loss("noise does not match batch".into()));
    }
    let k = model.config.k();
    let max_len = batch.iter().map(Vec::len).max().unwrap_or(0);
    if max_len == 0 {
        return Err(ModelError::Loss("batch contains an empty sequence".into()));
    }

    let mut g = Graph::new(model.store.precision());
    let pad_row: Vec<usize> = (0..k).map(|a| model.config.pad_index(a)).collect();

    let mut pooled = Vec::with_capacity(batch.len());
    let mut ce_sum: Option<TensorId> = None;
    let mut target_count = 0usize;
    let mut per_attr = vec![0.0; k];
    let mut unweighted_sum = 0.0;
    let mut masked_slots = 0usize;

    for (seq, seq_noise) in batch.iter().zip(noise) {
        if seq.is_empty() {
            return Err(ModelError::Loss("batch contains an empty sequence".into()));
        }
        if seq_noise.len() != seq.len() - 1 {
            return Err(ModelError::Loss("noise does not match sequence length".into()));
        }
        let mut padded = seq.clone();
        padded.resize(max_len, pad_row.clone());
        let x = model.embed_sequence(&mut g, &[], &padded)?;
        let out = model.generator_forward(&mut g, x);

        let valid = g.slice_rows(out.pooled_source, 0, seq.len());
        pooled.push(g.mean_pool_rows(valid));

        let z_first = g.slice_rows(out.latents, 0, 1);
        for (j, state) in (1..seq.len()).zip(seq_noise) {
            target_count += 1;
            if state.masked_count() == 0 {
                continue;
            }
            let z_next = g.slice_rows(out.latents, j - 1, 1);
            let zhat = model.ciem_enhance(&mut g, z_next, z_first);
            let masked_input = state.indices(|a| model.config.mask_index(a));
            let logits = model.denoiser_forward(&mut g, &masked_input, zhat, state.t)?;
            let (ce, terms) = losses::masked_weighted_ce_graph(&mut g, &logits, &seq[j], state)?;
            for (a, w) in &terms.weighted {
                per_attr[*a] += w;
            }
            for (_, u) in &terms.unweighted {
                unweighted_sum += u;
                masked_slots += 1;
            }
            ce_sum = Some(match ce_sum {
                Some(prev) => g.add(prev, ce),
                None => ce,
            });
        }
    }

    let ce_mean = match ce_sum {
        Some(s) => g.scale(s, 1.0 / target_count.max(1) as f64),
        None => g.input(1, 1, vec![0.0]),
    };
    let cl = losses::contrastive_loss_graph(&mut g, &pooled, model.config.tau)?;
    let cl_scaled = g.scale(cl, model.config.lambda);
    let total = g.add(cl_scaled, ce_mean);

    let l_cl = g.scalar_value(cl);
    let l_ce = g.scalar_value(ce_mean);
    let denom = target_count.max(1) as f64;
    let breakdown = LossBreakdown {
        l_cl,
        l_ce,
        total: losses::total_loss(l_cl, l_ce, model.config.lambda),
        per_attribute_ce: per_attr.iter().map(|v| v / denom).collect(),
        mean_masked_ce: if masked_slots == 0 { 0.0 } else { unweighted_sum / masked_slots as f64 },
        masked_slots,
    };
    Ok(BuiltBatch { graph: g, total, breakdown })
}

/// Forward-only loss evaluation under fixed noise.
pub fn compute_loss(
    model: &SeqModel,
    batch: &[Vec<Vec<usize>>],
    noise: &BatchNoise,
) -> Result<LossBreakdown, ModelError> {
    Ok(build_batch(model, batch, noise)?.breakdown)
}

/// Loss and parameter gradients under fixed noise.
pub fn compute_loss_and_grads(
    model: &SeqModel,
    batch: &[Vec<Vec<usize>>],
    noise: &BatchNoise,
) -> Result<(LossBreakdown, Gradients), ModelError> {
    let built = build_batch(model, batch, noise)?;
    let grads = built.graph.backward(built.total);
    Ok((built.breakdown, grads))
}

/// Euclidean norm over every parameter gradient.
pub fn global_grad_norm(grads: &Gradients) -> f64 {
    grads
        .params
        .values()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Multiplier that brings a gradient of norm `norm` inside the clip.
pub fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone)]
pub struct StepReport {
    /// 1-based step number just completed.
    pub step: usize,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub breakdown: LossBreakdown,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    step: usize,
    seed: u64,
    rng_word_pos: String,
    model: ModelConfig,
    train: TrainConfig,
}

const CHECKPOINT_FORMAT: &str = "cadenza-checkpoint-v1";

/// Model, optimizer state, schedule position, and the training noise
/// stream.
pub struct Trainer {
    pub model: SeqModel,
    pub train: TrainConfig,
    step: usize,
    opt_m: BTreeMap<ParamId, Vec<f64>>,
    opt_v: BTreeMap<ParamId, Vec<f64>>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl Trainer {
    pub fn new(model: SeqModel, train: TrainConfig) -> Result<Self, ModelError> {
        train.validate()?;
        let seed = train.seed;
        let zeros: BTreeMap<ParamId, Vec<f64>> = model
            .store
            .ids()
            .map(|id| {
                let (r, c) = model.store.shape(id);
                (id, vec![0.0; r * c])
            })
            .collect();
        Ok(Trainer {
            model,
            train,
            step: 0,
            opt_m: zeros.clone(),
            opt_v: zeros,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        })
    }

    /// Optimizer steps completed so far.
    pub fn completed_steps(&self) -> usize {
        self.step
    }

    /// Linear warmup to `max_lr`, then cosine decay to `min_lr`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let cfg = &self.train;
        let warmup = ((cfg.max_steps as f64 * cfg.warmup_frac).round() as usize).max(1);
        if step < warmup {
            return cfg.max_lr * (step + 1) as f64 / warmup as f64;
        }
        if cfg.max_steps <= warmup {
            return cfg.max_lr;
        }
        let progress = (step - warmup) as f64 / (cfg.max_steps - warmup) as f64;
        let progress = progress.min(1.0);
        cfg.min_lr
            + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// Draw batch indices: a partial shuffle without replacement when the
    /// corpus is large enough, with replacement otherwise.
    pub fn sample_batch_indices(&mut self, corpus_len: usize) -> Vec<usize> {
        let b = self.train.batch_size;
        if corpus_len >= b {
            let mut idx: Vec<usize> = (0..corpus_len).collect();
            for i in 0..b {
                let j = self.rng.gen_range(i..corpus_len);
                idx.swap(i, j);
            }
            idx.truncate(b);
            idx
        } else {
            (0..b).map(|_| self.rng.gen_range(0..corpus_len)).collect()
        }
    }

    /// One optimizer step at the scheduled learning rate.
    pub fn train_step(&mut self, batch: &[Vec<Vec<usize>>]) -> Result<StepReport, ModelError> {
        let lr = self.lr_at(self.step);
        self.train_step_with_lr(batch, lr)
    }

    /// One optimizer step at an explicit learning rate (zero is a no-op
    /// update, useful for probes).
    pub fn train_step_with_lr(
        &mut self,
        batch: &[Vec<Vec<usize>>],
        lr: f64,
    ) -> Result<StepReport, ModelError> {
        let noise = sample_batch_noise(batch, &mut self.rng)?;
        let (breakdown, grads) = compute_loss_and_grads(&self.model, batch, &noise)?;
        let grad_norm = global_grad_norm(&grads);
        if !breakdown.total.is_finite() || !grad_norm.is_finite() {
            return Err(ModelError::Train(format!(
                "non-finite loss at step {} (lr {lr:e}): total {}, l_cl {}, l_ce {}, grad norm {}",
                self.step + 1,
                breakdown.total,
                breakdown.l_cl,
                breakdown.l_ce,
                grad_norm
            )));
        }
        let scale = clip_factor(grad_norm, self.train.grad_clip);
        self.apply_adamw(&grads, lr, scale);
        self.step += 1;
        Ok(StepReport { step: self.step, lr, grad_norm, breakdown })
    }

    /// Decoupled-weight-decay adaptive-moment update. Moments and
    /// parameters are rounded through the store precision after every
    /// update so checkpoints restore the exact training state.
    fn apply_adamw(&mut self, grads: &Gradients, lr: f64, grad_scale: f64) {
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let precision = self.model.store.precision();
        let wd = self.train.weight_decay;
        let ids: Vec<ParamId> = self.model.store.ids().collect();
        for id in ids {
            let g = grads.params.get(&id);
            let m = self.opt_m.get_mut(&id).expect("moment registered");
            let v = self.opt_v.get_mut(&id).expect("moment registered");
            let p = self.model.store.values(id);
            let mut new_p = Vec::with_capacity(p.len());
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |gv| gv[i]) * grad_scale;
                m[i] = precision.round(BETA1 * m[i] + (1.0 - BETA1) * gi);
                v[i] = precision.round(BETA2 * v[i] + (1.0 - BETA2) * gi * gi);
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                new_p.push(p[i] - lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * p[i]));
            }
            self.model.store.set_values(id, new_p);
        }
    }

    /// Write parameters, optimizer moments, and loop state.
    pub fn save_checkpoint(&self, bin: &Path, manifest: &Path) -> Result<(), ModelError> {
        let store = &self.model.store;
        let mut names: Vec<(String, ParamId)> = Vec::new();
        for id in store.ids() {
            names.push((store.name(id).to_string(), id));
        }
        let mut tensors: Vec<TensorOut<'_>> = Vec::new();
        for (name, id) in &names {
            let (r, c) = store.shape(*id);
            tensors.push(TensorOut { name, rows: r, cols: c, values: store.values(*id) });
        }
        let m_names: Vec<String> = names.iter().map(|(n, _)| format!("opt.m.{n}")).collect();
        let v_names: Vec<String> = names.iter().map(|(n, _)| format!("opt.v.{n}")).collect();
        for ((name, id), label) in names.iter().zip(&m_names) {
            let _ = name;
            let (r, c) = store.shape(*id);
            tensors.push(TensorOut { name: label, rows: r, cols: c, values: &self.opt_m[id] });
        }
        for ((name, id), label) in names.iter().zip(&v_names) {
            let _ = name;
            let (r, c) = store.shape(*id);
            tensors.push(TensorOut { name: label, rows: r, cols: c, values: &self.opt_v[id] });
        }
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            step: self.step,
            seed: self.seed,
            rng_word_pos: self.rng.get_word_pos().to_string(),
            model: self.model.config.clone(),
            train: self.train.clone(),
        };
        let extra = serde_json::to_value(&meta)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        checkpoint::save(bin, manifest, &tensors, &extra)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    /// Restore a trainer (model, moments, schedule position, noise stream)
    /// from [`Trainer::save_checkpoint`] output.
    pub fn load_checkpoint(bin: &Path, manifest: &Path) -> Result<Trainer, ModelError> {
        let (tensors, extra) =
            checkpoint::load(bin, manifest).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let meta: CheckpointMeta = serde_json::from_value(extra)
            .map_err(|e| ModelError::Checkpoint(format!("bad metadata: {e}")))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format {}", meta.format)));
        }
        let word_pos: u128 = meta
            .rng_word_pos
            .parse()
            .map_err(|_| ModelError::Checkpoint("bad rng position".into()))?;

        let model = SeqModel::new(meta.model.clone(), 0)?;
        let mut trainer = Trainer::new(model, meta.train.clone())?;
        let by_name: BTreeMap<&str, &checkpoint::TensorIn> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();

        let ids: Vec<ParamId> = trainer.model.store.ids().collect();
        for id in ids {
            let name = trainer.model.store.name(id).to_string();
            let (r, c) = trainer.model.store.shape(id);
            let fetch = |label: &str| -> Result<Vec<f64>, ModelError> {
                let t = by_name.get(label).ok_or_else(|| {
                    ModelError::Checkpoint(format!("tensor {label} missing from checkpoint"))
                })?;
                if t.rows != r || t.cols != c {
                    return Err(ModelError::Checkpoint(format!(
                        "tensor {label}: checkpoint shape {}x{} does not match model {r}x{c}",
                        t.rows, t.cols
                    )));
                }
                Ok(t.values.clone())
            };
            let p = fetch(&name)?;
            let m = fetch(&format!("opt.m.{name}"))?;
            let v = fetch(&format!("opt.v.{name}"))?;
            trainer.model.store.set_values(id, p);
            trainer.opt_m.insert(id, m);
            trainer.opt_v.insert(id, v);
        }
        if by_name.len() != 3 * trainer.model.store.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                by_name.len(),
                3 * trainer.model.store.len()
            )));
        }

        trainer.step = meta.step;
        trainer.seed = meta.seed;
        trainer.rng = ChaCha8Rng::seed_from_u64(meta.seed);
        trainer.rng.set_word_pos(word_pos);
        Ok(trainer)
    }
}

/// Loop controls for [`run_training`].
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Append per-step rows here (header written if the file is new).
    pub csv_path: Option<&'a Path>,
    /// Write `last.bin` / `last.json` checkpoints here at the configured
    /// interval and at the end.
    pub checkpoint_dir: Option<&'a Path>,
    /// Stop once the rolling mean over `early_stop_window` steps of the
    /// unweighted masked cross-entropy drops below this.
    pub early_stop_ce: Option<f64>,
    /// Rolling window width; 0 means 25.
    pub early_stop_window: usize,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps_run: usize,
    pub stopped_early: bool,
    /// Rolling mean of the unweighted masked cross-entropy at exit.
    pub rolling_mean_masked_ce: f64,
    pub last: Option<StepReport>,
    /// Sequences shortened to fit the model's maximum length.
    pub truncated_sequences: usize,
}

/// Run the training loop to `max_steps` (or early stop) over a corpus of
/// token sequences (each starting with the anchor note).
pub fn run_training(
    trainer: &mut Trainer,
    corpus: &[Vec<Vec<usize>>],
    opts: &RunOptions<'_>,
) -> Result<RunSummary, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::Train("empty corpus".into()));
    }
    let m_max = trainer.model.config.m_max;
    let mut truncated = 0;
    let corpus: Vec<Vec<Vec<usize>>> = corpus
        .iter()
        .map(|seq| {
            if seq.len() > m_max {
                truncated += 1;
                seq[..m_max].to_vec()
            } else {
                seq.clone()
            }
        })
        .collect();

    let mut csv = match opts.csv_path {
        Some(path) => {
            let fresh = !path.exists();
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| ModelError::Train(format!("cannot open {}: {e}", path.display())))?;
            if fresh {
                writeln!(f, "step,lr,l_cl,l_ce,total,mean_masked_ce,grad_norm")
                    .map_err(|e| ModelError::Train(e.to_string()))?;
            }
            Some(f)
        }
        None => None,
    };

    let window = if opts.early_stop_window == 0 { 25 } else { opts.early_stop_window };
    let mut recent: Vec<f64> = Vec::new();
    let mut last: Option<StepReport> = None;
    let mut stopped_early = false;

    let save = |trainer: &Trainer| -> Result<(), ModelError> {
        if let Some(dir) = opts.checkpoint_dir {
            fs::create_dir_all(dir)
                .map_err(|e| ModelError::Train(format!("cannot create {}: {e}", dir.display())))?;
            trainer.save_checkpoint(&dir.join("last.bin"), &dir.join("last.json"))?;
        }
        Ok(())
    };

    while trainer.step < trainer.train.max_steps {
        let idx = trainer.sample_batch_indices(corpus.len());
        let batch: Vec<Vec<Vec<usize>>> = idx.iter().map(|&i| corpus[i].clone()).collect();
        let report = trainer.train_step(&batch)?;

        if let Some(f) = csv.as_mut() {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                report.step,
                report.lr,
                report.breakdown.l_cl,
                report.breakdown.l_ce,
                report.breakdown.total,
                report.breakdown.mean_masked_ce,
                report.grad_norm
            )
            .map_err(|e| ModelError::Train(e.to_string()))?;
        }

        recent.push(report.breakdown.mean_masked_ce);
        if recent.len() > window {
            recent.remove(0);
        }
        let interval = trainer.train.checkpoint_interval;
        if interval > 0 && report.step % interval == 0 {
            save(trainer)?;
        }
        last = Some(report);

        if let Some(limit) = opts.early_stop_ce {
            if recent.len() == window {
                let rolling = recent.iter().sum::<f64>() / window as f64;
                if rolling < limit {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    save(trainer)?;

    let rolling = if recent.is_empty() {
        f64::NAN
    } else {
        recent.iter().sum::<f64>() / recent.len() as f64
    };
    Ok(RunSummary {
        steps_run: trainer.step,
        stopped_early,
        rolling_mean_masked_ce: rolling,
        last,
        truncated_sequences: truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PrecisionChoice;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d: 8,
            l_gen: 1,
            l_dec: 1,
            heads: 2,
            m_max: 6,
            precision: PrecisionChoice::F64,
            attr_sizes: vec![3, 4],
            ..ModelConfig::default()
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig { max_steps: 10, batch_size: 2, seed: 9, ..TrainConfig::default() }
    }

    fn tiny_batch() -> Vec<Vec<Vec<usize>>> {
        vec![
            vec![vec![0, 0], vec![1, 2], vec![2, 3]],
            vec![vec![0, 0], vec![0, 1]],
        ]
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig {
            max_lr: 1.0,
            min_lr: 0.1,
            max_steps: 100,
            warmup_frac: 0.1,
            ..tiny_train()
        };
        let model = SeqModel::new(tiny_config(), 1).unwrap();
        let tr = Trainer::new(model, cfg).unwrap();
        assert!((tr.lr_at(9) - 1.0).abs() < 1e-12);
        assert!(tr.lr_at(0) < tr.lr_at(5));
        assert!(tr.lr_at(20) > tr.lr_at(60));
        for s in 0..100 {
            let lr = tr.lr_at(s);
            assert!(lr >= 0.1 - 1e-12 && lr <= 1.0 + 1e-12);
        }
        assert!((tr.lr_at(99) - 0.1) < 0.01);
    }

    #[test]
    fn clip_factor_caps_large_norms() {
        assert_eq!(clip_factor(10.0, 1.0), 0.1);
        assert_eq!(clip_factor(0.5, 1.0), 1.0);
        assert!((10.0 * clip_factor(10.0, 1.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let model = SeqModel::new(tiny_config(), 2).unwrap();
        let mut tr = Trainer::new(model, tiny_train()).unwrap();
        let before: Vec<Vec<f64>> = tr
            .model
            .store
            .ids()
            .map(|id| tr.model.store.values(id).to_vec())
            .collect();
        tr.train_step_with_lr(&tiny_batch(), 0.0).unwrap();
        tr.train_step_with_lr(&tiny_batch(), 0.0).unwrap();
        let after: Vec<Vec<f64>> = tr
            .model
            .store
            .ids()
            .map(|id| tr.model.store.values(id).to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn loss_is_finite_and_total_is_the_combination() {
        let model = SeqModel::new(tiny_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = tiny_batch();
        let noise = sample_batch_noise(&batch, &mut rng).unwrap();
        let b = compute_loss(&model, &batch, &noise).unwrap();
        assert!(b.total.is_finite() && b.l_cl >= 0.0);
        assert_eq!(b.total, model.config.lambda * b.l_cl + b.l_ce);
        let per_sum: f64 = b.per_attribute_ce.iter().sum();
        assert!((per_sum - b.l_ce).abs() < 1e-9);
    }

    #[test]
    fn same_seed_gives_identical_runs() {
        let run = || -> Vec<f64> {
            let model = SeqModel::new(tiny_config(), 4).unwrap();
            let mut tr = Trainer::new(model, tiny_train()).unwrap();
            (0..3)
                .map(|_| tr.train_step(&tiny_batch()).unwrap().breakdown.total)
                .collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_parameters_abort_with_diagnostics() {
        let model = SeqModel::new(tiny_config(), 5).unwrap();
        let mut tr = Trainer::new(model, tiny_train()).unwrap();
        let id = tr.model.store.id_of("gen.b0.attn.wq").unwrap();
        let (r, c) = tr.model.store.shape(id);
        tr.model.store.set_values(id, vec![f64::NAN; r * c]);
        let err = tr.train_step(&tiny_batch()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step 1") && msg.contains("lr"), "got: {msg}");
    }

    #[test]
    fn undersized_batches_are_rejected() {
        let model = SeqModel::new(tiny_config(), 6).unwrap();
        let mut tr = Trainer::new(model, tiny_train()).unwrap();
        let one = vec![tiny_batch().remove(0)];
        assert!(tr.train_step(&one).is_err());
    }

    #[test]
    fn batch_indices_without_replacement_are_distinct() {
        let model = SeqModel::new(tiny_config(), 7).unwrap();
        let mut tr = Trainer::new(model, TrainConfig { batch_size: 4, ..tiny_train() }).unwrap();
        for _ in 0..20 {
            let idx = tr.sample_batch_indices(8);
            assert_eq!(idx.len(), 4);
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 4, "duplicates in {idx:?}");
            assert!(idx.iter().all(|&i| i < 8));
        }
        let idx = tr.sample_batch_indices(2);
        assert_eq!(idx.len(), 4);
        assert!(idx.iter().all(|&i| i < 2));
    }
}
