//! Decoder-only transformer with block-partitioned width upscaling.
//!
//! A base model is an ordinary pre-norm decoder (RMS norm, rotary attention,
//! GELU feed-forward, untied input/output embeddings, no biases). Upscaling
//! widens every hidden dimension by `d_up` without touching the base
//! weights: each linear becomes a 2x2 block partition
//!
//! ```text
//! [ y    ]   [ W    W12 ] [ x    ]
//! [ y_up ] = [ W21  W22 ] [ x_up ]
//! ```
//!
//! where `W` is the frozen base weight, `W12` starts at zero (the function-
//! preservation switch), and `W21`/`W22` are fresh trainable blocks. In
//! attention, the upscaled rows form whole new heads; the original heads
//! read only the original stream, so with `W12 = 0` the original activations
//! reproduce the base model exactly, token for token.

mod base;
mod checkpoint;
mod config;
mod forward;
mod keys;
mod partition;
mod upscale;

pub use base::BaseParams;
pub use checkpoint::{
    checkpoint_kind, load_base, load_upscaled, save_base, save_upscaled, CheckpointKind,
};
pub use config::{ModelConfig, UpscalePlan, Collaborative, InitKind};
pub use forward::{
    forward_base, forward_bundle, forward_upscaled, BaseForward, BundleForward, ParamBinding,
    UpForward,
};
pub use keys::{Block, LinearSlot, ParamKey};
pub use partition::{expand_linear, init_svd_block, PartitionedLinear};
pub use upscale::{upscale_model, UpLayer, UpscaledModel};

use crate::numerics::NumericsError;
use thiserror::Error;

/// Standard deviation for fresh Gaussian parameter draws (embeddings,
/// linears, and He-style draws are scaled from it or from fan-in).
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("incompatible upscale plan: {0}")]
    IncompatiblePlan(String),
    #[error("sequence too long: {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
