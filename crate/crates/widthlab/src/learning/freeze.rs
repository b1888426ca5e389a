//! Freeze-mask construction: which parameters each mode may update.

use super::ParamStore;
use crate::model::{Block, Collaborative, LinearSlot, ParamKey, UpscaledModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    Preserve,
    Adapt,
    Route { tau: f64 },
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Preserve => "preserve",
            TrainMode::Adapt => "adapt",
            TrainMode::Route { .. } => "route",
        }
    }
}

/// Per-parameter trainable flags in canonical key order.
#[derive(Debug, Clone)]
pub struct FreezeMask {
    entries: Vec<(ParamKey, bool)>,
}

impl FreezeMask {
    pub fn is_trainable(&self, key: ParamKey) -> bool {
        self.entries
            .iter()
            .any(|&(k, trainable)| k == key && trainable)
    }

    /// Keys the optimizer may update, in canonical order.
    pub fn trainable_keys(&self) -> Vec<ParamKey> {
        self.entries
            .iter()
            .filter(|(_, t)| *t)
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn n_trainable_tensors(&self) -> usize {
        self.entries.iter().filter(|(_, t)| *t).count()
    }

    pub fn n_trainable_elements(&self, store: &impl ParamStore) -> usize {
        self.trainable_keys()
            .iter()
            .map(|&k| {
                let (r, c) = store.param(k).shape();
                r * c
            })
            .sum()
    }
}

/// Builds the freeze mask for an upscaled model under the given mode.
///
/// All base tensors (original weights, embeddings, norm scales, output
/// projection) are frozen in every mode. The upscaled-stream tensors
/// (`embed_up`, `W21`, `W22`, upscaled norm scales) always train. The
/// `W12` blocks and the upscaled output projection are the switch:
/// frozen in Preserve, free in Adapt, and in Route the per-layer blocks
/// open only above the preserved prefix and only in collaborative modules.
pub fn build_freeze_mask(model: &UpscaledModel, mode: TrainMode) -> FreezeMask {
    let plan = &model.plan;
    let entries = model
        .keys()
        .into_iter()
        .map(|key| (key, trainable(key, mode, plan.l_fp, &plan.collaborative)))
        .collect();
    FreezeMask { entries }
}

/// Builds a mask over a base model's keys from an arbitrary predicate.
/// Used by the pretraining, full fine-tuning, and depth-baseline paths.
pub fn build_base_mask(
    store: &impl ParamStore,
    pred: impl Fn(ParamKey) -> bool,
) -> FreezeMask {
    let entries = store.keys().into_iter().map(|k| (k, pred(k))).collect();
    FreezeMask { entries }
}

fn trainable(key: ParamKey, mode: TrainMode, l_fp: usize, collab: &Collaborative) -> bool {
    match key {
        ParamKey::Embed
        | ParamKey::AttnNorm(_)
        | ParamKey::FfnNorm(_)
        | ParamKey::FinalNorm
        | ParamKey::Output => false,
        ParamKey::Linear(_, _, Block::W) => false,
        ParamKey::EmbedUp
        | ParamKey::AttnNormUp(_)
        | ParamKey::FfnNormUp(_)
        | ParamKey::FinalNormUp => true,
        ParamKey::Linear(_, _, Block::W21 | Block::W22) => true,
        ParamKey::Linear(l, slot, Block::W12) => match mode {
            TrainMode::Preserve => false,
            TrainMode::Adapt => true,
            TrainMode::Route { .. } => l >= l_fp && slot_collaborative(slot, collab),
        },
        // The upscaled output projection is the only path from the upscaled
        // stream into the original logit coordinates, so it follows the
        // same mode rules as the W12 blocks (always open for Route: the
        // adapt branch needs it regardless of layer).
        ParamKey::OutputUp => !matches!(mode, TrainMode::Preserve),
    }
}

fn slot_collaborative(slot: LinearSlot, collab: &Collaborative) -> bool {
    match slot {
        LinearSlot::Q | LinearSlot::K | LinearSlot::V | LinearSlot::O => collab.mha,
        LinearSlot::FfnUp | LinearSlot::FfnDown => collab.ffn,
    }
}
