//! Training loop and the three learning modes for upscaled models.
//!
//! The modes differ only in which parameters train and which logits carry
//! the loss:
//!
//! * `Preserve`: every `W12` block and the upscaled output projection stay
//!   frozen at zero, so the original function is untouchable by training.
//! * `Adapt`: all `W12` blocks and the upscaled output projection train,
//!   trading exact preservation for plasticity.
//! * `Route`: `W12` trains only in collaborative modules of layers at or
//!   above the preserved prefix, and each token picks between a preserving
//!   and an adapting logit branch by cosine similarity at the output.
//!
//! Base (non-upscaled) models train through the same optimizer for the
//! pretraining and fine-tuning baselines.

mod freeze;
mod metrics;
mod optim;
mod route;
mod schedule;
mod trainer;

pub use freeze::{build_base_mask, build_freeze_mask, FreezeMask, TrainMode};
pub use metrics::{read_metrics, MetricRecord, MetricsWriter, METRICS_SCHEMA_VERSION};
pub use optim::{AdamHyper, AdamW, GradAccum};
pub use route::{cosine_rows, route_choices, route_logits, LogitBundle};
pub use schedule::lr_schedule;
pub use trainer::{BaseTrainer, StepStats, TrainConfig, UpTrainer};

pub(crate) use trainer::next_token_targets;

use crate::model::{BaseParams, ModelError, ParamKey, UpscaledModel};
use crate::numerics::{Array2, NumericsError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics encoding error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("non-finite loss {loss} at step {step}; step aborted, parameters unchanged")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("training batch is empty or holds no next-token targets")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Uniform access to a model's named parameter tensors. The optimizer and
/// freeze mask work against this trait so base and upscaled models share
/// one training path.
pub trait ParamStore {
    fn keys(&self) -> Vec<ParamKey>;
    fn param(&self, key: ParamKey) -> &Array2;
    fn param_mut(&mut self, key: ParamKey) -> &mut Array2;
}

impl ParamStore for BaseParams {
    fn keys(&self) -> Vec<ParamKey> {
        BaseParams::keys(self)
    }
    fn param(&self, key: ParamKey) -> &Array2 {
        BaseParams::param(self, key)
    }
    fn param_mut(&mut self, key: ParamKey) -> &mut Array2 {
        BaseParams::param_mut(self, key)
    }
}

impl ParamStore for UpscaledModel {
    fn keys(&self) -> Vec<ParamKey> {
        UpscaledModel::keys(self)
    }
    fn param(&self, key: ParamKey) -> &Array2 {
        UpscaledModel::param(self, key)
    }
    fn param_mut(&mut self, key: ParamKey) -> &mut Array2 {
        UpscaledModel::param_mut(self, key)
    }
}
