//! Parameters of the base (un-upscaled) decoder.

use super::keys::{Block, LinearSlot, ParamKey};
use super::{ModelConfig, ModelError, Result, INIT_STD};
use crate::numerics::{init_rng, Array2};

/// One layer: pre-norm attention then pre-norm feed-forward, both with
/// residual connections. Weights are stored as (output x input).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLayer {
    pub attn_norm: Array2,
    pub wq: Array2,
    pub wk: Array2,
    pub wv: Array2,
    pub wo: Array2,
    pub ffn_norm: Array2,
    pub w_ffn_up: Array2,
    pub w_ffn_down: Array2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseParams {
    pub config: ModelConfig,
    /// Token embedding table, vocab x d_model (lookup by row).
    pub embed: Array2,
    pub layers: Vec<BaseLayer>,
    pub final_norm: Array2,
    /// Output projection, vocab x d_model.
    pub output: Array2,
}

impl BaseParams {
    /// Fresh Gaussian initialization; norm scales start at one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = init_rng(seed);
        let d = config.d_model;
        let mut layers = Vec::with_capacity(config.n_layers);
        let embed = Array2::randn(config.vocab, d, &mut rng).scale(INIT_STD);
        for _ in 0..config.n_layers {
            layers.push(BaseLayer {
                attn_norm: ones(d),
                wq: Array2::randn(d, d, &mut rng).scale(INIT_STD),
                wk: Array2::randn(d, d, &mut rng).scale(INIT_STD),
                wv: Array2::randn(d, d, &mut rng).scale(INIT_STD),
                wo: Array2::randn(d, d, &mut rng).scale(INIT_STD),
                ffn_norm: ones(d),
                w_ffn_up: Array2::randn(config.d_ff, d, &mut rng).scale(INIT_STD),
                w_ffn_down: Array2::randn(d, config.d_ff, &mut rng).scale(INIT_STD),
            });
        }
        let final_norm = ones(d);
        let output = Array2::randn(config.vocab, d, &mut rng).scale(INIT_STD);
        Ok(BaseParams {
            config: config.clone(),
            embed,
            layers,
            final_norm,
            output,
        })
    }

    pub fn keys(&self) -> Vec<ParamKey> {
        ParamKey::base_keys(self.config.n_layers)
    }

    pub fn param(&self, key: ParamKey) -> &Array2 {
        match key {
            ParamKey::Embed => &self.embed,
            ParamKey::AttnNorm(l) => &self.layers[l].attn_norm,
            ParamKey::FfnNorm(l) => &self.layers[l].ffn_norm,
            ParamKey::Linear(l, slot, Block::W) => self.layers[l].linear(slot),
            ParamKey::FinalNorm => &self.final_norm,
            ParamKey::Output => &self.output,
            other => panic!("base model has no tensor {:?}", other),
        }
    }

    pub fn param_mut(&mut self, key: ParamKey) -> &mut Array2 {
        match key {
            ParamKey::Embed => &mut self.embed,
            ParamKey::AttnNorm(l) => &mut self.layers[l].attn_norm,
            ParamKey::FfnNorm(l) => &mut self.layers[l].ffn_norm,
            ParamKey::Linear(l, slot, Block::W) => self.layers[l].linear_mut(slot),
            ParamKey::FinalNorm => &mut self.final_norm,
            ParamKey::Output => &mut self.output,
            other => panic!("base model has no tensor {:?}", other),
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

impl BaseLayer {
    pub fn linear(&self, slot: LinearSlot) -> &Array2 {
        match slot {
            LinearSlot::Q => &self.wq,
            LinearSlot::K => &self.wk,
            LinearSlot::V => &self.wv,
            LinearSlot::O => &self.wo,
            LinearSlot::FfnUp => &self.w_ffn_up,
            LinearSlot::FfnDown => &self.w_ffn_down,
        }
    }

    pub fn linear_mut(&mut self, slot: LinearSlot) -> &mut Array2 {
        match slot {
            LinearSlot::Q => &mut self.wq,
            LinearSlot::K => &mut self.wk,
            LinearSlot::V => &mut self.wv,
            LinearSlot::O => &mut self.wo,
            LinearSlot::FfnUp => &mut self.w_ffn_up,
            LinearSlot::FfnDown => &mut self.w_ffn_down,
        }
    }
}

fn ones(n: usize) -> Array2 {
    Array2::from_fn(1, n, |_, _| 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::desk_default();
        let a = BaseParams::init(&cfg, 11).unwrap();
        let b = BaseParams::init(&cfg, 11).unwrap();
        assert!(a.embed.bit_eq(&b.embed));
        assert!(a.layers[3].wv.bit_eq(&b.layers[3].wv));
        let c = BaseParams::init(&cfg, 12).unwrap();
        assert!(!a.embed.bit_eq(&c.embed));
    }

    #[test]
    fn every_key_resolves() {
        let cfg = ModelConfig {
            vocab: 16,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            head_dim: 4,
            d_ff: 16,
            max_seq: 8,
        };
        let p = BaseParams::init(&cfg, 0).unwrap();
        for key in p.keys() {
            let t = p.param(key);
            assert!(t.rows() * t.cols() > 0, "{}", key.name());
        }
        assert!(p.n_params() > 0);
    }
}
