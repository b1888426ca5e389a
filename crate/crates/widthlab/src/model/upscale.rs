//! Whole-model width expansion.

use super::base::BaseParams;
use super::keys::{Block, LinearSlot, ParamKey};
use super::partition::{expand_linear, PartitionedLinear};
use super::{ModelConfig, ModelError, Result, UpscalePlan, INIT_STD};
use crate::numerics::{init_rng, Array2};

#[derive(Debug, Clone, PartialEq)]
pub struct UpLayer {
    pub attn_norm: Array2,
    /// Fresh scale for the upscaled stream's own normalization; the
    /// original stream keeps the frozen base scale, which is what makes
    /// normalization compatible with exact preservation.
    pub attn_norm_up: Array2,
    pub q: PartitionedLinear,
    pub k: PartitionedLinear,
    pub v: PartitionedLinear,
    pub o: PartitionedLinear,
    pub ffn_norm: Array2,
    pub ffn_norm_up: Array2,
    pub ffn_up: PartitionedLinear,
    pub ffn_down: PartitionedLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpscaledModel {
    pub config: ModelConfig,
    pub plan: UpscalePlan,
    pub embed: Array2,
    /// Extra embedding coordinates feeding the upscaled stream.
    pub embed_up: Array2,
    pub layers: Vec<UpLayer>,
    pub final_norm: Array2,
    pub final_norm_up: Array2,
    pub output: Array2,
    /// vocab x d_up, zero right after expansion so the logits of a fresh
    /// upscale equal the base logits exactly.
    pub output_up: Array2,
}

/// Expands every module of `base` according to `plan`.
///
/// The expansion never copies-and-modifies base weights: they are moved in
/// verbatim and stay frozen for the model's whole life. Returned warnings
/// describe rank shortfalls of `svd`-initialized blocks.
pub fn upscale_model(base: &BaseParams, plan: &UpscalePlan) -> Result<(UpscaledModel, Vec<String>)> {
    base.config.validate()?;
    plan.validate(&base.config)?;
    let cfg = &base.config;
    let mut rng = init_rng(plan.seed);
    let mut warnings = Vec::new();

    let embed_up = Array2::randn(cfg.vocab, plan.d_up, &mut rng).scale(INIT_STD);

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (l, bl) in base.layers.iter().enumerate() {
        let mut expand = |w: &Array2, rows_up: usize, cols_up: usize, slot: LinearSlot| {
            let (p, warn) =
                expand_linear(w, rows_up, cols_up, plan.init_w21, plan.init_w22, &mut rng)?;
            if let Some(w) = warn {
                warnings.push(format!("layer{l}.{}: {w}", slot.name()));
            }
            Ok::<_, ModelError>(p)
        };
        let q = expand(&bl.wq, plan.d_up, plan.d_up, LinearSlot::Q)?;
        let k = expand(&bl.wk, plan.d_up, plan.d_up, LinearSlot::K)?;
        let v = expand(&bl.wv, plan.d_up, plan.d_up, LinearSlot::V)?;
        let o = expand(&bl.wo, plan.d_up, plan.d_up, LinearSlot::O)?;
        let ffn_up = expand(&bl.w_ffn_up, plan.d_ff_up, plan.d_up, LinearSlot::FfnUp)?;
        let ffn_down = expand(&bl.w_ffn_down, plan.d_up, plan.d_ff_up, LinearSlot::FfnDown)?;
        layers.push(UpLayer {
            attn_norm: bl.attn_norm.clone(),
            attn_norm_up: ones(plan.d_up),
            q,
            k,
            v,
            o,
            ffn_norm: bl.ffn_norm.clone(),
            ffn_norm_up: ones(plan.d_up),
            ffn_up,
            ffn_down,
        });
    }

    Ok((
        UpscaledModel {
            config: cfg.clone(),
            plan: plan.clone(),
            embed: base.embed.clone(),
            embed_up,
            layers,
            final_norm: base.final_norm.clone(),
            final_norm_up: ones(plan.d_up),
            output: base.output.clone(),
            output_up: Array2::zeros(cfg.vocab, plan.d_up),
        },
        warnings,
    ))
}

impl UpscaledModel {
    pub fn keys(&self) -> Vec<ParamKey> {
        ParamKey::upscaled_keys(self.config.n_layers)
    }

    pub fn param(&self, key: ParamKey) -> &Array2 {
        match key {
            ParamKey::Embed => &self.embed,
            ParamKey::EmbedUp => &self.embed_up,
            ParamKey::AttnNorm(l) => &self.layers[l].attn_norm,
            ParamKey::AttnNormUp(l) => &self.layers[l].attn_norm_up,
            ParamKey::FfnNorm(l) => &self.layers[l].ffn_norm,
            ParamKey::FfnNormUp(l) => &self.layers[l].ffn_norm_up,
            ParamKey::Linear(l, slot, block) => self.layers[l].block(slot, block),
            ParamKey::FinalNorm => &self.final_norm,
            ParamKey::FinalNormUp => &self.final_norm_up,
            ParamKey::Output => &self.output,
            ParamKey::OutputUp => &self.output_up,
        }
    }

    pub fn param_mut(&mut self, key: ParamKey) -> &mut Array2 {
        match key {
            ParamKey::Embed => &mut self.embed,
            ParamKey::EmbedUp => &mut self.embed_up,
            ParamKey::AttnNorm(l) => &mut self.layers[l].attn_norm,
            ParamKey::AttnNormUp(l) => &mut self.layers[l].attn_norm_up,
            ParamKey::FfnNorm(l) => &mut self.layers[l].ffn_norm,
            ParamKey::FfnNormUp(l) => &mut self.layers[l].ffn_norm_up,
            ParamKey::Linear(l, slot, block) => self.layers[l].block_mut(slot, block),
            ParamKey::FinalNorm => &mut self.final_norm,
            ParamKey::FinalNormUp => &mut self.final_norm_up,
            ParamKey::Output => &mut self.output,
            ParamKey::OutputUp => &mut self.output_up,
        }
    }

    pub fn n_params(&self) -> usize {
        self.keys()
            .iter()
            .map(|&k| {
                let p = self.param(k);
                p.rows() * p.cols()
            })
            .sum()
    }

    /// True while every path from the upscaled stream into the original
    /// stream (per-layer `W12` and the output expansion) is exactly zero.
    pub fn fully_preserving(&self) -> bool {
        self.output_up.max_abs() == 0.0
            && self.layers.iter().all(|l| {
                LinearSlot::ALL
                    .iter()
                    .all(|&slot| l.block(slot, Block::W12).max_abs() == 0.0)
            })
    }

    /// True when layers below the fork depth cannot leak the upscaled
    /// stream into the original one, which is what makes the shared-prefix
    /// routed forward exact.
    pub fn prefix_preserving(&self, l_fp: usize) -> bool {
        self.layers[..l_fp.min(self.layers.len())].iter().all(|l| {
            LinearSlot::ALL
                .iter()
                .all(|&slot| l.block(slot, Block::W12).max_abs() == 0.0)
        })
    }

    pub fn validate_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() > self.config.max_seq {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        for &t in tokens {
            if t >= self.config.vocab {
                return Err(ModelError::TokenOutOfRange {
                    id: t,
                    vocab: self.config.vocab,
                });
            }
        }
        Ok(())
    }
}

impl UpLayer {
    pub fn linear(&self, slot: LinearSlot) -> &PartitionedLinear {
        match slot {
            LinearSlot::Q => &self.q,
            LinearSlot::K => &self.k,
            LinearSlot::V => &self.v,
            LinearSlot::O => &self.o,
            LinearSlot::FfnUp => &self.ffn_up,
            LinearSlot::FfnDown => &self.ffn_down,
        }
    }

    fn linear_mut(&mut self, slot: LinearSlot) -> &mut PartitionedLinear {
        match slot {
            LinearSlot::Q => &mut self.q,
            LinearSlot::K => &mut self.k,
            LinearSlot::V => &mut self.v,
            LinearSlot::O => &mut self.o,
            LinearSlot::FfnUp => &mut self.ffn_up,
            LinearSlot::FfnDown => &mut self.ffn_down,
        }
    }

    pub fn block(&self, slot: LinearSlot, block: Block) -> &Array2 {
        let p = self.linear(slot);
        match block {
            Block::W => &p.w,
            Block::W12 => &p.w12,
            Block::W21 => &p.w21,
            Block::W22 => &p.w22,
        }
    }

    pub fn block_mut(&mut self, slot: LinearSlot, block: Block) -> &mut Array2 {
        let p = self.linear_mut(slot);
        match block {
            Block::W => &mut p.w,
            Block::W12 => &mut p.w12,
            Block::W21 => &mut p.w21,
            Block::W22 => &mut p.w22,
        }
    }
}

fn ones(n: usize) -> Array2 {
    Array2::from_fn(1, n, |_, _| 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitKind;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            vocab: 16,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            head_dim: 4,
            d_ff: 16,
            max_seq: 8,
        }
    }

    fn tiny_plan() -> UpscalePlan {
        UpscalePlan {
            d_up: 4,
            d_ff_up: 8,
            init_w21: InitKind::Svd,
            init_w22: InitKind::Zero,
            l_fp: 1,
            collaborative: Collaborative { mha: true, ffn: true },
            tau: 0.99,
            seed: 3,
        }
    }

    use crate::model::Collaborative;

    #[test]
    fn expansion_preserves_base_weights_verbatim() {
        let base = BaseParams::init(&tiny_cfg(), 1).unwrap();
        let (up, warnings) = upscale_model(&base, &tiny_plan()).unwrap();
        assert!(warnings.is_empty());
        assert!(up.embed.bit_eq(&base.embed));
        assert!(up.output.bit_eq(&base.output));
        for (ul, bl) in up.layers.iter().zip(&base.layers) {
            assert!(ul.q.w.bit_eq(&bl.wq));
            assert!(ul.ffn_down.w.bit_eq(&bl.w_ffn_down));
            assert!(ul.attn_norm.bit_eq(&bl.attn_norm));
        }
        assert!(up.fully_preserving());
        assert_eq!(up.output_up.max_abs(), 0.0);
    }

    #[test]
    fn degenerate_plan_adds_nothing() {
        let base = BaseParams::init(&tiny_cfg(), 1).unwrap();
        let mut plan = tiny_plan();
        plan.d_up = 0;
        plan.d_ff_up = 0;
        let (up, _) = upscale_model(&base, &plan).unwrap();
        assert_eq!(up.n_params(), BaseParams::init(&tiny_cfg(), 1).unwrap().n_params());
    }

    #[test]
    fn block_shapes_follow_the_plan() {
        let base = BaseParams::init(&tiny_cfg(), 1).unwrap();
        let plan = tiny_plan();
        let (up, _) = upscale_model(&base, &plan).unwrap();
        let l = &up.layers[0];
        assert_eq!(l.q.w21.shape(), (plan.d_up, 8));
        assert_eq!(l.q.w12.shape(), (8, plan.d_up));
        assert_eq!(l.ffn_up.w21.shape(), (plan.d_ff_up, 8));
        assert_eq!(l.ffn_up.w22.shape(), (plan.d_ff_up, plan.d_up));
        assert_eq!(l.ffn_down.w21.shape(), (plan.d_up, 16));
        assert_eq!(l.ffn_down.w12.shape(), (8, plan.d_ff_up));
        assert_eq!(up.embed_up.shape(), (16, plan.d_up));
        assert_eq!(up.output_up.shape(), (16, plan.d_up));
    }

    #[test]
    fn every_upscaled_key_resolves() {
        let base = BaseParams::init(&tiny_cfg(), 1).unwrap();
        let (up, _) = upscale_model(&base, &tiny_plan()).unwrap();
        for key in up.keys() {
            let _ = up.param(key); // must not panic
        }
    }
}
