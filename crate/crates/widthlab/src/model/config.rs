//! Model and upscale-plan configuration.

use super::{ModelError, Result};
use serde::{Deserialize, Serialize};

/// Architecture of the base decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub d_ff: usize,
    pub max_seq: usize,
}

impl ModelConfig {
    /// The desk-scale lab default, small enough that every experiment in
    /// the test suite runs in seconds to minutes on one core.
    pub fn desk_default() -> Self {
        ModelConfig {
            vocab: 256,
            d_model: 64,
            n_layers: 8,
            n_heads: 4,
            head_dim: 16,
            d_ff: 256,
            max_seq: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model != self.n_heads * self.head_dim {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} must equal n_heads {} * head_dim {}",
                self.d_model, self.n_heads, self.head_dim
            )));
        }
        if self.head_dim % 2 != 0 || self.head_dim == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "head_dim {} must be even and positive for rotary encoding",
                self.head_dim
            )));
        }
        if self.vocab < 2 {
            return Err(ModelError::InvalidConfig("vocab must be at least 2".into()));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.max_seq < 2 {
            return Err(ModelError::InvalidConfig(
                "n_layers and d_ff must be positive, max_seq at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Initialization strategy for the fresh `W21` / `W22` blocks.
///
/// `Svd` copies a rank-truncated reconstruction of the frozen base weight,
/// giving the new blocks the base weight's dominant directions; `Random`
/// is a He-style Gaussian; `Zero` leaves the block silent until trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Zero,
    Random,
    Svd,
}

impl std::fmt::Display for InitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitKind::Zero => "zero",
            InitKind::Random => "random",
            InitKind::Svd => "svd",
        })
    }
}

/// Which modules may train their `W12` blocks in Route mode above the
/// function-preserving depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collaborative {
    pub mha: bool,
    pub ffn: bool,
}

impl Default for Collaborative {
    fn default() -> Self {
        Collaborative { mha: true, ffn: false }
    }
}

/// How to widen a base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpscalePlan {
    /// Added hidden width; must be a multiple of `head_dim` so the new
    /// attention rows form whole heads. Zero is the degenerate no-op plan.
    pub d_up: usize,
    /// Added feed-forward width.
    pub d_ff_up: usize,
    pub init_w21: InitKind,
    pub init_w22: InitKind,
    /// Number of bottom layers whose `W12` stays frozen in Route mode.
    pub l_fp: usize,
    pub collaborative: Collaborative,
    /// Cosine threshold of the token router.
    pub tau: f64,
    /// Seed for the fresh-block draws.
    pub seed: u64,
}

impl UpscalePlan {
    /// Desk-scale default: one new head and the matching feed-forward
    /// widening, dominant-direction init on `W21`, silent `W22`.
    pub fn desk_default() -> Self {
        UpscalePlan {
            d_up: 16,
            d_ff_up: 64,
            init_w21: InitKind::Svd,
            init_w22: InitKind::Zero,
            l_fp: 3,
            collaborative: Collaborative::default(),
            tau: 0.99,
            seed: 0,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.d_up % config.head_dim != 0 {
            return Err(ModelError::IncompatiblePlan(format!(
                "d_up {} is not a multiple of head_dim {}",
                self.d_up, config.head_dim
            )));
        }
        if self.l_fp > config.n_layers {
            return Err(ModelError::IncompatiblePlan(format!(
                "l_fp {} exceeds layer count {}",
                self.l_fp, config.n_layers
            )));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(ModelError::IncompatiblePlan(format!(
                "tau {} outside [-1, 1]",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn new_heads(&self, config: &ModelConfig) -> usize {
        self.d_up / config.head_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_validates() {
        let cfg = ModelConfig::desk_default();
        cfg.validate().unwrap();
        UpscalePlan::desk_default().validate(&cfg).unwrap();
    }

    #[test]
    fn mismatched_heads_are_rejected() {
        let mut cfg = ModelConfig::desk_default();
        cfg.head_dim = 10;
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn plan_must_align_with_head_dim() {
        let cfg = ModelConfig::desk_default();
        let mut plan = UpscalePlan::desk_default();
        plan.d_up = 20;
        assert!(matches!(
            plan.validate(&cfg),
            Err(ModelError::IncompatiblePlan(_))
        ));
        plan.d_up = 0;
        plan.validate(&cfg).unwrap(); // degenerate no-op plan is legal
    }

    #[test]
    fn tau_and_depth_are_range_checked() {
        let cfg = ModelConfig::desk_default();
        let mut plan = UpscalePlan::desk_default();
        plan.tau = 1.5;
        assert!(plan.validate(&cfg).is_err());
        plan.tau = 0.99;
        plan.l_fp = cfg.n_layers + 1;
        assert!(plan.validate(&cfg).is_err());
    }
}
