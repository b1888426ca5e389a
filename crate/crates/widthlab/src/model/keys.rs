//! Stable parameter addressing shared by checkpoints, freeze masks, and
//! optimizer state.
//!
//! Every tensor in a model has exactly one [`ParamKey`]; enumeration order
//! is fixed, so aligned `Vec`s keyed by position are safe to persist and
//! compare across runs.

use serde::{Deserialize, Serialize};

/// Position of a tensor inside a partitioned linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    /// Frozen base weight (original rows x original cols).
    W,
    /// Original rows x upscaled cols; zero at expansion, the preservation
    /// switch.
    W12,
    /// Upscaled rows x original cols.
    W21,
    /// Upscaled rows x upscaled cols.
    W22,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::W, Block::W12, Block::W21, Block::W22];

    pub fn name(self) -> &'static str {
        match self {
            Block::W => "w",
            Block::W12 => "w12",
            Block::W21 => "w21",
            Block::W22 => "w22",
        }
    }
}

/// The six linear modules of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinearSlot {
    Q,
    K,
    V,
    O,
    FfnUp,
    FfnDown,
}

impl LinearSlot {
    pub const ALL: [LinearSlot; 6] = [
        LinearSlot::Q,
        LinearSlot::K,
        LinearSlot::V,
        LinearSlot::O,
        LinearSlot::FfnUp,
        LinearSlot::FfnDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinearSlot::Q => "q",
            LinearSlot::K => "k",
            LinearSlot::V => "v",
            LinearSlot::O => "o",
            LinearSlot::FfnUp => "ffn_up",
            LinearSlot::FfnDown => "ffn_down",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, LinearSlot::Q | LinearSlot::K | LinearSlot::V | LinearSlot::O)
    }
}

/// Address of one tensor in a base or upscaled model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKey {
    Embed,
    EmbedUp,
    AttnNorm(usize),
    AttnNormUp(usize),
    FfnNorm(usize),
    FfnNormUp(usize),
    Linear(usize, LinearSlot, Block),
    FinalNorm,
    FinalNormUp,
    Output,
    /// Maps the upscaled final hidden state into the logits; zero at
    /// expansion and subject to the same mode rules as the `W12` blocks,
    /// since it is the only path from the upscaled stream into the
    /// original output coordinates.
    OutputUp,
}

impl ParamKey {
    /// Canonical tensor name used in checkpoints and reports.
    pub fn name(self) -> String {
        match self {
            ParamKey::Embed => "embed".into(),
            ParamKey::EmbedUp => "embed_up".into(),
            ParamKey::AttnNorm(l) => format!("layer{l}.attn_norm"),
            ParamKey::AttnNormUp(l) => format!("layer{l}.attn_norm_up"),
            ParamKey::FfnNorm(l) => format!("layer{l}.ffn_norm"),
            ParamKey::FfnNormUp(l) => format!("layer{l}.ffn_norm_up"),
            ParamKey::Linear(l, slot, block) => {
                format!("layer{l}.{}.{}", slot.name(), block.name())
            }
            ParamKey::FinalNorm => "final_norm".into(),
            ParamKey::FinalNormUp => "final_norm_up".into(),
            ParamKey::Output => "output".into(),
            ParamKey::OutputUp => "output_up".into(),
        }
    }

    /// Layer index for per-depth freeze rules; `None` for tensors outside
    /// the layer stack.
    pub fn layer(self) -> Option<usize> {
        match self {
            ParamKey::AttnNorm(l)
            | ParamKey::AttnNormUp(l)
            | ParamKey::FfnNorm(l)
            | ParamKey::FfnNormUp(l)
            | ParamKey::Linear(l, _, _) => Some(l),
            _ => None,
        }
    }

    /// Keys of a base model, in canonical order.
    pub fn base_keys(n_layers: usize) -> Vec<ParamKey> {
        let mut keys = vec![ParamKey::Embed];
        for l in 0..n_layers {
            keys.push(ParamKey::AttnNorm(l));
            for slot in [LinearSlot::Q, LinearSlot::K, LinearSlot::V, LinearSlot::O] {
                keys.push(ParamKey::Linear(l, slot, Block::W));
            }
            keys.push(ParamKey::FfnNorm(l));
            for slot in [LinearSlot::FfnUp, LinearSlot::FfnDown] {
                keys.push(ParamKey::Linear(l, slot, Block::W));
            }
        }
        keys.push(ParamKey::FinalNorm);
        keys.push(ParamKey::Output);
        keys
    }

    /// Keys of an upscaled model, in canonical order.
    pub fn upscaled_keys(n_layers: usize) -> Vec<ParamKey> {
        let mut keys = vec![ParamKey::Embed, ParamKey::EmbedUp];
        for l in 0..n_layers {
            keys.push(ParamKey::AttnNorm(l));
            keys.push(ParamKey::AttnNormUp(l));
            for slot in [LinearSlot::Q, LinearSlot::K, LinearSlot::V, LinearSlot::O] {
                for block in Block::ALL {
                    keys.push(ParamKey::Linear(l, slot, block));
                }
            }
            keys.push(ParamKey::FfnNorm(l));
            keys.push(ParamKey::FfnNormUp(l));
            for slot in [LinearSlot::FfnUp, LinearSlot::FfnDown] {
                for block in Block::ALL {
                    keys.push(ParamKey::Linear(l, slot, block));
                }
            }
        }
        keys.push(ParamKey::FinalNorm);
        keys.push(ParamKey::FinalNormUp);
        keys.push(ParamKey::Output);
        keys.push(ParamKey::OutputUp);
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn key_names_are_unique() {
        for keys in [ParamKey::base_keys(3), ParamKey::upscaled_keys(3)] {
            let names: HashSet<String> = keys.iter().map(|k| k.name()).collect();
            assert_eq!(names.len(), keys.len());
        }
    }

    #[test]
    fn base_keys_are_a_subset_of_upscaled_keys() {
        let base: HashSet<String> = ParamKey::base_keys(4).iter().map(|k| k.name()).collect();
        let up: HashSet<String> = ParamKey::upscaled_keys(4).iter().map(|k| k.name()).collect();
        assert!(base.is_subset(&up));
    }
}
