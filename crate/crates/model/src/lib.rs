//! Two-level symbolic-music model: an autoregressive transformer emits one
//! latent vector per upcoming note, and a bidirectional masked denoiser
//! recovers that note's categorical attributes in parallel from the latent.
//!
//! The crate splits into configuration ([`config`]), the network itself
//! ([`net`]), the masking process and parallel attribute sampler
//! ([`diffusion`]), the training objectives ([`losses`]), and a desk-scale
//! training loop with checkpointing ([`trainer`]).

pub mod config;
pub mod diffusion;
pub mod losses;
pub mod net;
pub mod trainer;

use thiserror::Error;

/// Errors produced by model construction, inference, and training.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    Config(String),

    #[error("vocab: {0}")]
    Vocab(String),

    #[error("sequence length {len} exceeds maximum {max}")]
    Overlength { len: usize, max: usize },

    #[error("diffusion time {0} outside [0, 1]")]
    Time(f64),

    #[error("schedule: {0}")]
    Schedule(String),

    #[error("clamp: {0}")]
    Clamp(String),

    #[error("loss: {0}")]
    Loss(String),

    #[error("training aborted: {0}")]
    Train(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
