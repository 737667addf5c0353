//! Architecture and training hyperparameters, loadable from a TOML file.
//!
//! File values override built-in defaults; command-line flags in turn
//! override file values (handled by the CLI, which re-serializes the
//! resolved configuration via [`dump_toml`]).

use std::fs;
use std::path::Path;

use cadenza_midi::vocab::AttributeVocab;
use cadenza_tensor::Precision;
use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Numeric precision the parameter store and graphs run at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecisionChoice {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl PrecisionChoice {
    pub fn as_precision(self) -> Precision {
        match self {
            PrecisionChoice::F32 => Precision::F32,
            PrecisionChoice::F64 => Precision::F64,
        }
    }
}

/// Everything that fixes the network's shape and objectives.
///
/// `attr_sizes[k]` is the number of content symbols for attribute `k`; each
/// embedding table and output head additionally carries a mask row (index
/// `attr_sizes[k]`) and a pad row (index `attr_sizes[k] + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding and latent width.
    pub d: usize,
    /// Autoregressive generator depth.
    pub l_gen: usize,
    /// Attribute denoiser depth.
    pub l_dec: usize,
    /// Attention heads in both stacks.
    pub heads: usize,
    /// Maximum sequence length (condition prefix plus notes).
    pub m_max: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the contrastive term in the total loss.
    pub lambda: f64,
    /// Generator layer whose hidden states are pooled for the contrastive
    /// loss; defaults to the middle layer `l_gen / 2`.
    pub mlsdes_layer: Option<usize>,
    /// Size of the optional condition-prefix vocabulary (0 disables it).
    pub cond_vocab: usize,
    /// Numeric precision for parameters and graphs.
    pub precision: PrecisionChoice,
    /// Content vocabulary sizes per attribute.
    pub attr_sizes: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            l_gen: 4,
            l_dec: 2,
            heads: 4,
            m_max: 1024,
            tau: 0.5,
            lambda: 0.1,
            mlsdes_layer: None,
            cond_vocab: 0,
            precision: PrecisionChoice::F32,
            attr_sizes: AttributeVocab::canonical().content_sizes().to_vec(),
        }
    }
}

impl ModelConfig {
    /// Number of attribute positions per note.
    pub fn k(&self) -> usize {
        self.attr_sizes.len()
    }

    /// Full table width for attribute `k`: content symbols, mask, pad.
    pub fn table_width(&self, k: usize) -> usize {
        self.attr_sizes[k] + 2
    }

    /// Index of the mask symbol for attribute `k`.
    pub fn mask_index(&self, k: usize) -> usize {
        self.attr_sizes[k]
    }

    /// Index of the pad symbol for attribute `k`.
    pub fn pad_index(&self, k: usize) -> usize {
        self.attr_sizes[k] + 1
    }

    /// Generator layer feeding the contrastive pool.
    pub fn mlsdes(&self) -> usize {
        self.mlsdes_layer.unwrap_or(self.l_gen / 2)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.d == 0 {
            return fail("d must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("d {} not divisible by heads {}", self.d, self.heads));
        }
        if self.l_gen == 0 || self.l_dec == 0 {
            return fail("l_gen and l_dec must be positive".into());
        }
        if self.mlsdes() >= self.l_gen {
            return fail(format!(
                "mlsdes_layer {} out of range for {} generator layers",
                self.mlsdes(),
                self.l_gen
            ));
        }
        if self.m_max == 0 {
            return fail("m_max must be positive".into());
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.attr_sizes.is_empty() {
            return fail("attr_sizes must list at least one attribute".into());
        }
        if self.attr_sizes.iter().any(|&v| v == 0) {
            return fail("every attribute needs at least one content symbol".into());
        }
        Ok(())
    }
}

/// Optimizer and loop settings for the desk-scale trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Peak learning rate after warmup.
    pub max_lr: f64,
    /// Floor the cosine decay ends at.
    pub min_lr: f64,
    /// Total optimizer steps.
    pub max_steps: usize,
    /// Fraction of `max_steps` spent in linear warmup.
    pub warmup_frac: f64,
    /// Global gradient-norm clip threshold.
    pub grad_clip: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Sequences per optimizer step (the contrastive loss needs at least 2).
    pub batch_size: usize,
    /// Seed for parameter init and the training-time noise stream.
    pub seed: u64,
    /// Steps between checkpoints (0 saves only at the end).
    pub checkpoint_interval: usize,
    /// Reserved gradient-accumulation factor; must currently be 1.
    pub grad_accum: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 3e-4,
            min_lr: 0.0,
            max_steps: 2000,
            warmup_frac: 0.05,
            grad_clip: 1.0,
            weight_decay: 0.01,
            batch_size: 4,
            seed: 0,
            checkpoint_interval: 0,
            grad_accum: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if !(self.max_lr > 0.0) {
            return fail(format!("max_lr must be positive, got {}", self.max_lr));
        }
        if !(self.min_lr >= 0.0) || self.min_lr > self.max_lr {
            return fail("min_lr must lie in [0, max_lr]".into());
        }
        if !(self.grad_clip > 0.0) {
            return fail(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return fail("warmup_frac must lie in [0, 1)".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be nonnegative".into());
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2".into());
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive".into());
        }
        if self.grad_accum != 1 {
            return fail("grad_accum other than 1 is not implemented".into());
        }
        Ok(())
    }
}

/// On-disk configuration: `[model]` and `[train]` TOML tables, both
/// optional, both merged over defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ConfigFile {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        self.train.validate()
    }
}

/// Parse a TOML configuration string.
pub fn parse_toml(text: &str) -> Result<ConfigFile, ModelError> {
    let cfg: ConfigFile =
        toml::from_str(text).map_err(|e| ModelError::Config(format!("bad config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load a TOML configuration file.
pub fn load_toml(path: &Path) -> Result<ConfigFile, ModelError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ModelError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_toml(&text)
}

/// Serialize a resolved configuration back to TOML.
pub fn dump_toml(cfg: &ConfigFile) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}
