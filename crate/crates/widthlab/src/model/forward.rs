//! Tape-building forward passes for base and upscaled models.
//!
//! The upscaled forward keeps the original and upscaled streams as separate
//! tensors; the concatenated hidden state is never materialized. When
//! `mask_w12` is set, every per-layer `W12` term is skipped outright, which
//! both defines the preserved branch and keeps its original stream
//! bit-compatible with the base forward (no `+ 0` arithmetic is inserted).

use super::base::BaseParams;
use super::keys::{Block, LinearSlot, ParamKey};
use super::partition::PartitionedLinear;
use super::upscale::{UpLayer, UpscaledModel};
use super::Result;
use crate::numerics::{Array2, NodeId, Tape};

/// Map from parameter key to its tape leaf. Each parameter is registered
/// at most once per tape, so gradients from every use (including both
/// branches of a routed forward) accumulate on one node.
pub struct ParamBinding {
    entries: Vec<(ParamKey, NodeId)>,
}

impl ParamBinding {
    fn new() -> Self {
        ParamBinding { entries: Vec::new() }
    }

    fn bind(&mut self, tape: &mut Tape, key: ParamKey, value: &Array2) -> NodeId {
        if let Some(id) = self.node(key) {
            return id;
        }
        let id = tape.leaf(value.clone());
        self.entries.push((key, id));
        id
    }

    pub fn node(&self, key: ParamKey) -> Option<NodeId> {
        self.entries
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, id)| *id)
    }

    pub fn entries(&self) -> &[(ParamKey, NodeId)] {
        &self.entries
    }
}

pub struct BaseForward {
    pub logits: NodeId,
    /// Hidden state after each layer (before the final norm).
    pub hiddens: Vec<NodeId>,
    pub binding: ParamBinding,
}

pub struct UpForward {
    /// Original-part logits `W_out x_L`.
    pub z: NodeId,
    /// Upscaled contribution `W_out_up x_up_L` (zero tensor when the plan
    /// added no width).
    pub zup: NodeId,
    /// `z + zup`, the model's working logits.
    pub logits: NodeId,
    /// Per-layer (original, upscaled) hidden states.
    pub hiddens: Vec<(NodeId, Option<NodeId>)>,
    pub binding: ParamBinding,
}

/// Preserved and adapted branches of one forward, sharing the layers below
/// the fork.
pub struct BundleForward {
    pub z_preserve: NodeId,
    pub zup_preserve: NodeId,
    pub z_adapt: NodeId,
    pub zup_adapt: NodeId,
    /// Layer index the branches forked at. Equals the plan's `l_fp` when
    /// the prefix cannot leak the upscaled stream (all its `W12` are zero);
    /// otherwise 0, so the preserved branch is still the true fully-masked
    /// forward.
    pub fork: usize,
    pub binding: ParamBinding,
}

pub fn forward_base(tape: &mut Tape, params: &BaseParams, tokens: &[usize]) -> Result<BaseForward> {
    params.validate_tokens(tokens)?;
    let cfg = &params.config;
    let mut b = ParamBinding::new();

    let embed = b.bind(tape, ParamKey::Embed, &params.embed);
    let mut x = tape.embed_rows(embed, tokens)?;
    let mut hiddens = Vec::with_capacity(cfg.n_layers);

    for (l, layer) in params.layers.iter().enumerate() {
        let gn = b.bind(tape, ParamKey::AttnNorm(l), &layer.attn_norm);
        let xn = normed(tape, x, gn)?;
        let q = linear(tape, &mut b, xn, ParamKey::Linear(l, LinearSlot::Q, Block::W), &layer.wq)?;
        let k = linear(tape, &mut b, xn, ParamKey::Linear(l, LinearSlot::K, Block::W), &layer.wk)?;
        let v = linear(tape, &mut b, xn, ParamKey::Linear(l, LinearSlot::V, Block::W), &layer.wv)?;
        let att = attend(tape, q, k, v, cfg.n_heads, cfg.head_dim)?;
        let o = linear(tape, &mut b, att, ParamKey::Linear(l, LinearSlot::O, Block::W), &layer.wo)?;
        x = tape.add(x, o)?;

        let gn = b.bind(tape, ParamKey::FfnNorm(l), &layer.ffn_norm);
        let xn = normed(tape, x, gn)?;
        let h = linear(
            tape,
            &mut b,
            xn,
            ParamKey::Linear(l, LinearSlot::FfnUp, Block::W),
            &layer.w_ffn_up,
        )?;
        let h = tape.gelu(h);
        let o = linear(
            tape,
            &mut b,
            h,
            ParamKey::Linear(l, LinearSlot::FfnDown, Block::W),
            &layer.w_ffn_down,
        )?;
        x = tape.add(x, o)?;
        hiddens.push(x);
    }

    let gn = b.bind(tape, ParamKey::FinalNorm, &params.final_norm);
    let xn = normed(tape, x, gn)?;
    let logits = linear(tape, &mut b, xn, ParamKey::Output, &params.output)?;
    Ok(BaseForward {
        logits,
        hiddens,
        binding: b,
    })
}

pub fn forward_upscaled(
    tape: &mut Tape,
    model: &UpscaledModel,
    tokens: &[usize],
    mask_w12: bool,
) -> Result<UpForward> {
    model.validate_tokens(tokens)?;
    let mut b = ParamBinding::new();
    let (mut x, mut xup) = embed_pair(tape, &mut b, model, tokens)?;
    let mut hiddens = Vec::with_capacity(model.config.n_layers);
    for l in 0..model.layers.len() {
        (x, xup) = up_layer(tape, &mut b, model, l, x, xup, mask_w12)?;
        hiddens.push((x, xup));
    }
    let (z, zup, logits) = head(tape, &mut b, model, tokens.len(), x, xup)?;
    Ok(UpForward {
        z,
        zup,
        logits,
        hiddens,
        binding: b,
    })
}

pub fn forward_bundle(
    tape: &mut Tape,
    model: &UpscaledModel,
    tokens: &[usize],
) -> Result<BundleForward> {
    model.validate_tokens(tokens)?;
    let mut b = ParamBinding::new();
    let fork = if model.prefix_preserving(model.plan.l_fp) {
        model.plan.l_fp
    } else {
        0
    };

    // Below the fork all W12 are zero, so the masked and unmasked forwards
    // coincide; compute that prefix once with masked semantics.
    let (mut x, mut xup) = embed_pair(tape, &mut b, model, tokens)?;
    for l in 0..fork {
        (x, xup) = up_layer(tape, &mut b, model, l, x, xup, true)?;
    }

    let (mut xp, mut xpu) = (x, xup);
    for l in fork..model.layers.len() {
        (xp, xpu) = up_layer(tape, &mut b, model, l, xp, xpu, true)?;
    }
    let (z_preserve, zup_preserve, _) = head(tape, &mut b, model, tokens.len(), xp, xpu)?;

    let (mut xa, mut xau) = (x, xup);
    for l in fork..model.layers.len() {
        (xa, xau) = up_layer(tape, &mut b, model, l, xa, xau, false)?;
    }
    let (z_adapt, zup_adapt, _) = head(tape, &mut b, model, tokens.len(), xa, xau)?;

    Ok(BundleForward {
        z_preserve,
        zup_preserve,
        z_adapt,
        zup_adapt,
        fork,
        binding: b,
    })
}

fn embed_pair(
    tape: &mut Tape,
    b: &mut ParamBinding,
    model: &UpscaledModel,
    tokens: &[usize],
) -> Result<(NodeId, Option<NodeId>)> {
    let embed = b.bind(tape, ParamKey::Embed, &model.embed);
    let x = tape.embed_rows(embed, tokens)?;
    let xup = if model.plan.d_up > 0 {
        let embed_up = b.bind(tape, ParamKey::EmbedUp, &model.embed_up);
        Some(tape.embed_rows(embed_up, tokens)?)
    } else {
        None
    };
    Ok((x, xup))
}

fn up_layer(
    tape: &mut Tape,
    b: &mut ParamBinding,
    model: &UpscaledModel,
    l: usize,
    x: NodeId,
    xup: Option<NodeId>,
    mask_w12: bool,
) -> Result<(NodeId, Option<NodeId>)> {
    let cfg = &model.config;
    let layer: &UpLayer = &model.layers[l];
    let new_heads = model.plan.new_heads(cfg);

    // Attention. The original stream is normalized with the frozen base
    // scale, the upscaled stream with its own trainable scale.
    let gn = b.bind(tape, ParamKey::AttnNorm(l), &layer.attn_norm);
    let xn = normed(tape, x, gn)?;
    let xupn = match xup {
        Some(xup) => {
            let gnu = b.bind(tape, ParamKey::AttnNormUp(l), &layer.attn_norm_up);
            Some(normed(tape, xup, gnu)?)
        }
        None => None,
    };

    let (q, qn) = partitioned(tape, b, l, LinearSlot::Q, &layer.q, xn, xupn, mask_w12)?;
    let (k, kn) = partitioned(tape, b, l, LinearSlot::K, &layer.k, xn, xupn, mask_w12)?;
    let (v, vn) = partitioned(tape, b, l, LinearSlot::V, &layer.v, xn, xupn, mask_w12)?;
    let att = attend(tape, q, k, v, cfg.n_heads, cfg.head_dim)?;
    let att_new = match (qn, kn, vn) {
        (Some(qn), Some(kn), Some(vn)) if new_heads > 0 => {
            Some(attend(tape, qn, kn, vn, new_heads, cfg.head_dim)?)
        }
        _ => None,
    };
    let (o, o_up) = partitioned(tape, b, l, LinearSlot::O, &layer.o, att, att_new, mask_w12)?;
    let x = tape.add(x, o)?;
    let xup = add_opt(tape, xup, o_up)?;

    // Feed-forward.
    let gn = b.bind(tape, ParamKey::FfnNorm(l), &layer.ffn_norm);
    let xn = normed(tape, x, gn)?;
    let xupn = match xup {
        Some(xup) => {
            let gnu = b.bind(tape, ParamKey::FfnNormUp(l), &layer.ffn_norm_up);
            Some(normed(tape, xup, gnu)?)
        }
        None => None,
    };
    let (h, h_up) = partitioned(tape, b, l, LinearSlot::FfnUp, &layer.ffn_up, xn, xupn, mask_w12)?;
    let h = tape.gelu(h);
    let h_up = h_up.map(|h| tape.gelu(h));
    let (o, o_up) = partitioned(
        tape,
        b,
        l,
        LinearSlot::FfnDown,
        &layer.ffn_down,
        h,
        h_up,
        mask_w12,
    )?;
    let x = tape.add(x, o)?;
    let xup = add_opt(tape, xup, o_up)?;
    Ok((x, xup))
}

/// Applies one partitioned linear to an (original, upscaled) input pair.
#[allow(clippy::too_many_arguments)]
fn partitioned(
    tape: &mut Tape,
    b: &mut ParamBinding,
    l: usize,
    slot: LinearSlot,
    lin: &PartitionedLinear,
    in_orig: NodeId,
    in_up: Option<NodeId>,
    mask_w12: bool,
) -> Result<(NodeId, Option<NodeId>)> {
    let w = b.bind(tape, ParamKey::Linear(l, slot, Block::W), &lin.w);
    let mut y = tape.matmul_nt(in_orig, w)?;
    if let Some(in_up) = in_up {
        if !mask_w12 && lin.cols_up() > 0 {
            let w12 = b.bind(tape, ParamKey::Linear(l, slot, Block::W12), &lin.w12);
            let t = tape.matmul_nt(in_up, w12)?;
            y = tape.add(y, t)?;
        }
    }
    let y_up = if lin.rows_up() > 0 {
        let w21 = b.bind(tape, ParamKey::Linear(l, slot, Block::W21), &lin.w21);
        let mut u = tape.matmul_nt(in_orig, w21)?;
        if let Some(in_up) = in_up {
            if lin.cols_up() > 0 {
                let w22 = b.bind(tape, ParamKey::Linear(l, slot, Block::W22), &lin.w22);
                let t = tape.matmul_nt(in_up, w22)?;
                u = tape.add(u, t)?;
            }
        }
        Some(u)
    } else {
        None
    };
    Ok((y, y_up))
}

fn head(
    tape: &mut Tape,
    b: &mut ParamBinding,
    model: &UpscaledModel,
    seq: usize,
    x: NodeId,
    xup: Option<NodeId>,
) -> Result<(NodeId, NodeId, NodeId)> {
    let gn = b.bind(tape, ParamKey::FinalNorm, &model.final_norm);
    let xn = normed(tape, x, gn)?;
    let z = linear(tape, b, xn, ParamKey::Output, &model.output)?;
    let zup = match xup {
        Some(xup) => {
            let gnu = b.bind(tape, ParamKey::FinalNormUp, &model.final_norm_up);
            let xupn = normed(tape, xup, gnu)?;
            linear(tape, b, xupn, ParamKey::OutputUp, &model.output_up)?
        }
        None => tape.leaf(Array2::zeros(seq, model.config.vocab)),
    };
    let logits = tape.add(z, zup)?;
    Ok((z, zup, logits))
}

fn normed(tape: &mut Tape, x: NodeId, scale: NodeId) -> Result<NodeId> {
    let n = tape.rmsnorm(x)?;
    Ok(tape.mul_row_vec(n, scale)?)
}

fn linear(
    tape: &mut Tape,
    b: &mut ParamBinding,
    x: NodeId,
    key: ParamKey,
    w: &Array2,
) -> Result<NodeId> {
    let w = b.bind(tape, key, w);
    Ok(tape.matmul_nt(x, w)?)
}

fn add_opt(tape: &mut Tape, a: Option<NodeId>, b: Option<NodeId>) -> Result<Option<NodeId>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    })
}

/// Multi-head causal attention with rotary positions on queries and keys.
fn attend(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    n_heads: usize,
    head_dim: usize,
) -> Result<NodeId> {
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.col_slice(q, h * head_dim, head_dim)?;
        let qh = tape.rope(qh)?;
        let kh = tape.col_slice(k, h * head_dim, head_dim)?;
        let kh = tape.rope(kh)?;
        let vh = tape.col_slice(v, h * head_dim, head_dim)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let probs = tape.causal_softmax(scores)?;
        heads.push(tape.matmul(probs, vh)?);
    }
    Ok(tape.concat_cols(&heads)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaseParams, Collaborative, InitKind, ModelConfig, UpscalePlan};
    use crate::model::upscale::upscale_model;

    fn tiny() -> (ModelConfig, UpscalePlan) {
        (
            ModelConfig {
                vocab: 16,
                d_model: 8,
                n_layers: 3,
                n_heads: 2,
                head_dim: 4,
                d_ff: 16,
                max_seq: 8,
            },
            UpscalePlan {
                d_up: 4,
                d_ff_up: 8,
                init_w21: InitKind::Random,
                init_w22: InitKind::Random,
                l_fp: 1,
                collaborative: Collaborative { mha: true, ffn: true },
                tau: 0.99,
                seed: 7,
            },
        )
    }

    #[test]
    fn masked_upscaled_forward_reproduces_base_logits_bitwise() {
        let (cfg, plan) = tiny();
        let base = BaseParams::init(&cfg, 2).unwrap();
        let (up, _) = upscale_model(&base, &plan).unwrap();
        let tokens = [3usize, 1, 4, 1, 5, 9];

        let mut tb = Tape::new();
        let bf = forward_base(&mut tb, &base, &tokens).unwrap();
        let mut tu = Tape::new();
        let uf = forward_upscaled(&mut tu, &up, &tokens, true).unwrap();

        assert!(tu.value(uf.z).bit_eq(tb.value(bf.logits)));
        for (l, (h, _)) in uf.hiddens.iter().enumerate() {
            assert!(tu.value(*h).bit_eq(tb.value(bf.hiddens[l])), "layer {l}");
        }
        // Fresh expansion: the upscaled logit contribution is exactly zero,
        // so the working logits are the base logits too.
        assert_eq!(tu.value(uf.zup).max_abs(), 0.0);
        assert!(tu.value(uf.logits).bit_eq(tb.value(bf.logits)));
    }

    #[test]
    fn fresh_expansion_is_preserving_even_unmasked() {
        let (cfg, plan) = tiny();
        let base = BaseParams::init(&cfg, 2).unwrap();
        let (up, _) = upscale_model(&base, &plan).unwrap();
        let tokens = [0usize, 15, 7, 7];

        let mut tb = Tape::new();
        let bf = forward_base(&mut tb, &base, &tokens).unwrap();
        let mut tu = Tape::new();
        let uf = forward_upscaled(&mut tu, &up, &tokens, false).unwrap();
        let diff = tu.value(uf.z).max_abs_diff(tb.value(bf.logits)).unwrap();
        assert!(diff < 1e-12, "max |z - base| = {diff:.3e}");
    }

    #[test]
    fn nonzero_w12_breaks_preservation_only_when_unmasked() {
        let (cfg, plan) = tiny();
        let base = BaseParams::init(&cfg, 2).unwrap();
        let (mut up, _) = upscale_model(&base, &plan).unwrap();
        up.layers[2].q.w12.set(0, 0, 1e-3);
        let tokens = [3usize, 1, 4, 1, 5, 9];

        let mut tb = Tape::new();
        let bf = forward_base(&mut tb, &base, &tokens).unwrap();

        let mut tm = Tape::new();
        let masked = forward_upscaled(&mut tm, &up, &tokens, true).unwrap();
        assert!(tm.value(masked.z).bit_eq(tb.value(bf.logits)));

        let mut tu = Tape::new();
        let unmasked = forward_upscaled(&mut tu, &up, &tokens, false).unwrap();
        let diff = tu.value(unmasked.z).max_abs_diff(tb.value(bf.logits)).unwrap();
        assert!(diff > 0.0, "perturbed W12 must shift the original logits");
    }

    #[test]
    fn bundle_branches_match_dedicated_forwards() {
        let (cfg, plan) = tiny();
        let base = BaseParams::init(&cfg, 4).unwrap();
        let (mut up, _) = upscale_model(&base, &plan).unwrap();
        // Give the adapted branch something to diverge with, above the fork.
        up.layers[1].o.w12.set(0, 1, 0.05);
        up.layers[2].ffn_down.w12.set(2, 3, -0.07);
        let mut touched = Array2::zeros(16, 4);
        touched.set(0, 0, 0.02);
        up.output_up = touched;
        let tokens = [1usize, 2, 3, 4, 5];

        let mut tb = Tape::new();
        let bundle = forward_bundle(&mut tb, &up, &tokens).unwrap();
        assert_eq!(bundle.fork, 1);

        let mut tp = Tape::new();
        let preserve = forward_upscaled(&mut tp, &up, &tokens, true).unwrap();
        let mut ta = Tape::new();
        let adapt = forward_upscaled(&mut ta, &up, &tokens, false).unwrap();

        assert!(tb.value(bundle.z_preserve).bit_eq(tp.value(preserve.z)));
        assert!(tb.value(bundle.zup_preserve).bit_eq(tp.value(preserve.zup)));
        assert!(tb.value(bundle.z_adapt).bit_eq(ta.value(adapt.z)));
        assert!(tb.value(bundle.zup_adapt).bit_eq(ta.value(adapt.zup)));
    }

    #[test]
    fn bundle_refuses_to_share_a_leaky_prefix() {
        let (cfg, plan) = tiny();
        let base = BaseParams::init(&cfg, 4).unwrap();
        let (mut up, _) = upscale_model(&base, &plan).unwrap();
        up.layers[0].q.w12.set(0, 0, 0.1); // below l_fp = 1
        let tokens = [1usize, 2, 3];
        let mut tb = Tape::new();
        let bundle = forward_bundle(&mut tb, &up, &tokens).unwrap();
        assert_eq!(bundle.fork, 0);

        let mut tp = Tape::new();
        let preserve = forward_upscaled(&mut tp, &up, &tokens, true).unwrap();
        assert!(tb.value(bundle.z_preserve).bit_eq(tp.value(preserve.z)));
    }

    #[test]
    fn degenerate_plan_forward_equals_base() {
        let (cfg, mut plan) = tiny();
        plan.d_up = 0;
        plan.d_ff_up = 0;
        let base = BaseParams::init(&cfg, 5).unwrap();
        let (up, _) = upscale_model(&base, &plan).unwrap();
        let tokens = [2usize, 4, 6];
        let mut tb = Tape::new();
        let bf = forward_base(&mut tb, &base, &tokens).unwrap();
        let mut tu = Tape::new();
        let uf = forward_upscaled(&mut tu, &up, &tokens, false).unwrap();
        assert!(tu.value(uf.logits).bit_eq(tb.value(bf.logits)));
    }

    #[test]
    fn rejects_bad_tokens_and_long_sequences() {
        let (cfg, _) = tiny();
        let base = BaseParams::init(&cfg, 2).unwrap();
        let mut tape = Tape::new();
        assert!(forward_base(&mut tape, &base, &[99]).is_err());
        let long: Vec<usize> = vec![0; cfg.max_seq + 1];
        assert!(forward_base(&mut tape, &base, &long).is_err());
    }
}
