//! Depth-expansion baseline: grow the model by stacking layers instead of
//! widening them. Each layer is followed by a copy whose residual write-back
//! projections are zeroed, so the expanded model computes the same function
//! as the base until the copies train.

use super::Result;
use crate::model::{BaseParams, ModelConfig};
use crate::numerics::Array2;

/// Doubles the depth of `base` by inserting a zeroed copy after every layer.
/// Returns the expanded parameters and the indices of the inserted copies,
/// the layers a depth-expansion run should train.
pub fn expand_depth(base: &BaseParams) -> Result<(BaseParams, Vec<usize>)> {
    let config = ModelConfig {
        n_layers: base.config.n_layers * 2,
        ..base.config.clone()
    };
    config.validate()?;

    let mut layers = Vec::with_capacity(config.n_layers);
    let mut copies = Vec::with_capacity(base.config.n_layers);
    for layer in &base.layers {
        layers.push(layer.clone());
        let mut copy = layer.clone();
        copy.wo = Array2::zeros(copy.wo.rows(), copy.wo.cols());
        copy.w_ffn_down = Array2::zeros(copy.w_ffn_down.rows(), copy.w_ffn_down.cols());
        copies.push(layers.len());
        layers.push(copy);
    }

    Ok((
        BaseParams {
            config,
            embed: base.embed.clone(),
            layers,
            final_norm: base.final_norm.clone(),
            output: base.output.clone(),
        },
        copies,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::build_base_mask;
    use crate::model::forward_base;
    use crate::numerics::Tape;

    fn tiny() -> BaseParams {
        let cfg = ModelConfig {
            vocab: 24,
            d_model: 16,
            n_layers: 3,
            n_heads: 2,
            head_dim: 8,
            d_ff: 32,
            max_seq: 12,
        };
        BaseParams::init(&cfg, 4).unwrap()
    }

    #[test]
    fn expanded_model_reproduces_base_logits() {
        let base = tiny();
        let (deep, copies) = expand_depth(&base).unwrap();
        assert_eq!(deep.config.n_layers, 6);
        assert_eq!(copies, vec![1, 3, 5]);

        let tokens = [3usize, 1, 19, 7, 2];
        let mut ta = Tape::new();
        let fa = forward_base(&mut ta, &base, &tokens).unwrap();
        let mut tb = Tape::new();
        let fb = forward_base(&mut tb, &deep, &tokens).unwrap();

        let la = ta.value(fa.logits);
        let lb = tb.value(fb.logits);
        let dev = la.max_abs_diff(lb).unwrap();
        assert!(dev < 1e-12, "{dev}");
    }

    #[test]
    fn copy_mask_trains_only_inserted_layers() {
        let base = tiny();
        let (deep, copies) = expand_depth(&base).unwrap();
        let mask = build_base_mask(&deep, |key| {
            key.layer().is_some_and(|l| copies.contains(&l))
        });
        let trainable = mask.trainable_keys();
        assert!(!trainable.is_empty());
        for key in &trainable {
            let l = key.layer().expect("copy keys carry a layer index");
            assert!(copies.contains(&l), "{}", key.name());
        }
    }
}
