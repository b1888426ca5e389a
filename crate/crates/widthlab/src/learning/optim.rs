//! Decoupled-weight-decay adaptive moment optimizer over named tensors.

use super::{FreezeMask, ParamStore, Result};
use crate::model::{ParamBinding, ParamKey};
use crate::numerics::{Array2, Gradients};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Gradient accumulator over the trainable keys, in canonical order.
/// Per-sequence tape gradients are added in with a weight so a batch of
/// uneven sequences still yields the mean-over-tokens gradient.
pub struct GradAccum {
    entries: Vec<(ParamKey, Array2)>,
}

impl GradAccum {
    pub fn new(store: &impl ParamStore, mask: &FreezeMask) -> Self {
        let entries = mask
            .trainable_keys()
            .into_iter()
            .map(|k| {
                let (r, c) = store.param(k).shape();
                (k, Array2::zeros(r, c))
            })
            .collect();
        GradAccum { entries }
    }

    /// Adds `scale` times every tape gradient whose leaf is bound to a
    /// trainable key. Frozen parameters are skipped here, so their
    /// gradients are computed but never applied.
    pub fn accumulate(
        &mut self,
        grads: &Gradients,
        binding: &ParamBinding,
        scale: f64,
    ) -> Result<()> {
        for &(key, node) in binding.entries() {
            if let Some(g) = grads.get(node) {
                if let Some(slot) = self.entry_mut(key) {
                    slot.add_assign_scaled(g, scale)?;
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: ParamKey) -> Option<&Array2> {
        self.entries
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, g)| g)
    }

    fn entry_mut(&mut self, key: ParamKey) -> Option<&mut Array2> {
        self.entries
            .iter_mut()
            .find(|(k, _)| *k == key)
            .map(|(_, g)| g)
    }
}

/// AdamW with first/second moment state per trainable tensor. Parameters
/// outside the freeze mask are never read or written, so frozen tensors
/// are bit-stable across any number of steps.
pub struct AdamW {
    hyper: AdamHyper,
    t: u32,
    slots: Vec<Slot>,
}

struct Slot {
    key: ParamKey,
    m: Array2,
    v: Array2,
}

impl AdamW {
    pub fn new(store: &impl ParamStore, mask: &FreezeMask, hyper: AdamHyper) -> Self {
        let slots = mask
            .trainable_keys()
            .into_iter()
            .map(|key| {
                let (r, c) = store.param(key).shape();
                Slot {
                    key,
                    m: Array2::zeros(r, c),
                    v: Array2::zeros(r, c),
                }
            })
            .collect();
        AdamW { hyper, t: 0, slots }
    }

    pub fn step(&mut self, store: &mut impl ParamStore, grads: &GradAccum, lr: f64) -> Result<()> {
        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for slot in &mut self.slots {
            let zero;
            let g = match grads.get(slot.key) {
                Some(g) => g,
                None => {
                    let (r, c) = store.param(slot.key).shape();
                    zero = Array2::zeros(r, c);
                    &zero
                }
            };
            let p = store.param_mut(slot.key);
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            for ((p, &g), (m, v)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + h.eps);
                *p -= lr * (update + h.weight_decay * *p);
            }
        }
        Ok(())
    }
}
