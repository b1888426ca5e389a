//! Single-threaded training loops for upscaled and base models.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_freeze_mask, lr_schedule, route_choices, AdamHyper, AdamW, FreezeMask, GradAccum,
    Result, TrainError, TrainMode,
};
use crate::model::{
    forward_base, forward_bundle, forward_upscaled, BaseParams, ParamBinding, UpscaledModel,
};
use crate::numerics::{init_rng, NodeId, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 100,
            batch_size: 8,
            seq_len: 64,
            learning_rate: 1e-3,
            warmup_ratio: 0.06,
            log_every: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Next-token targets contributing to the loss.
    pub tokens: usize,
    /// Fraction of tokens routed to the preserve branch (Route mode only).
    pub route_fraction: Option<f64>,
}

/// Per-sequence loss graph: loss node, parameter binding, and how many
/// tokens routed to preserve (Route mode).
struct SeqLoss {
    loss: NodeId,
    binding: ParamBinding,
    preserve_rows: Option<usize>,
}

pub struct UpTrainer {
    model: UpscaledModel,
    mode: TrainMode,
    mask: FreezeMask,
    opt: AdamW,
    cfg: TrainConfig,
    step: usize,
}

impl UpTrainer {
    pub fn new(model: UpscaledModel, mode: TrainMode, cfg: TrainConfig) -> Self {
        Self::with_hyper(model, mode, cfg, AdamHyper::default())
    }

    pub fn with_hyper(
        model: UpscaledModel,
        mode: TrainMode,
        cfg: TrainConfig,
        hyper: AdamHyper,
    ) -> Self {
        let mask = build_freeze_mask(&model, mode);
        let opt = AdamW::new(&model, &mask, hyper);
        UpTrainer {
            model,
            mode,
            mask,
            opt,
            cfg,
            step: 0,
        }
    }

    pub fn model(&self) -> &UpscaledModel {
        &self.model
    }

    pub fn into_model(self) -> UpscaledModel {
        self.model
    }

    pub fn mask(&self) -> &FreezeMask {
        &self.mask
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimizer step over a batch of token sequences. The loss is the
    /// mean negative log-likelihood over every next-token target in the
    /// batch; a non-finite loss aborts before any parameter changes.
    pub fn step_batch(&mut self, batch: &[Vec<usize>]) -> Result<StepStats> {
        let counts: Vec<usize> = batch.iter().map(|s| s.len().saturating_sub(1)).collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(TrainError::EmptyBatch);
        }
        let lr = lr_schedule(self.step, self.cfg.steps, self.cfg.warmup_ratio, self.cfg.learning_rate);

        let mut grads = GradAccum::new(&self.model, &self.mask);
        let mut weighted_loss = 0.0;
        let mut preserve_rows = 0usize;
        let mut routed_rows = 0usize;
        for (seq, &count) in batch.iter().zip(&counts) {
            if count == 0 {
                continue;
            }
            let mut tape = Tape::new();
            let seq_loss = self.sequence_loss(&mut tape, seq)?;
            weighted_loss += tape.value(seq_loss.loss).at(0, 0) * count as f64;
            if let Some(rows) = seq_loss.preserve_rows {
                preserve_rows += rows;
                routed_rows += seq.len();
            }
            let g = tape.backward(seq_loss.loss)?;
            grads.accumulate(&g, &seq_loss.binding, count as f64 / total as f64)?;
        }

        let loss = weighted_loss / total as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.step,
                loss,
            });
        }
        self.opt.step(&mut self.model, &grads, lr)?;
        let stats = StepStats {
            step: self.step,
            loss,
            lr,
            tokens: total,
            route_fraction: matches!(self.mode, TrainMode::Route { .. })
                .then(|| preserve_rows as f64 / routed_rows.max(1) as f64),
        };
        self.step += 1;
        Ok(stats)
    }

    fn sequence_loss(&self, tape: &mut Tape, seq: &[usize]) -> Result<SeqLoss> {
        let targets = next_token_targets(seq);
        match self.mode {
            TrainMode::Preserve => {
                let uf = forward_upscaled(tape, &self.model, seq, true)?;
                Ok(SeqLoss {
                    loss: tape.cross_entropy(uf.logits, &targets)?,
                    binding: uf.binding,
                    preserve_rows: None,
                })
            }
            TrainMode::Adapt => {
                let uf = forward_upscaled(tape, &self.model, seq, false)?;
                Ok(SeqLoss {
                    loss: tape.cross_entropy(uf.logits, &targets)?,
                    binding: uf.binding,
                    preserve_rows: None,
                })
            }
            TrainMode::Route { tau } => {
                let bf = forward_bundle(tape, &self.model, seq)?;
                let choices =
                    route_choices(tape.value(bf.z_preserve), tape.value(bf.z_adapt), tau);
                let avg = tape.add(bf.z_preserve, bf.z_adapt)?;
                let avg = tape.scale(avg, 0.5);
                let pre = tape.add(avg, bf.zup_preserve)?;
                let adapt = tape.add(bf.z_adapt, bf.zup_adapt)?;
                let routed = tape.row_select(pre, adapt, &choices)?;
                let preserve_rows = choices.iter().filter(|&&c| c).count();
                Ok(SeqLoss {
                    loss: tape.cross_entropy(routed, &targets)?,
                    binding: bf.binding,
                    preserve_rows: Some(preserve_rows),
                })
            }
        }
    }

    /// Runs the configured number of steps, sampling batches uniformly
    /// with replacement, and calls `on_step` after each optimizer step.
    pub fn run(
        &mut self,
        corpus: &[Vec<usize>],
        mut on_step: impl FnMut(&StepStats, &UpscaledModel) -> Result<()>,
    ) -> Result<()> {
        let mut rng = init_rng(self.cfg.seed);
        while self.step < self.cfg.steps {
            let batch = sample_batch(corpus, self.cfg.batch_size, &mut rng)?;
            let stats = self.step_batch(&batch)?;
            on_step(&stats, &self.model)?;
        }
        Ok(())
    }
}

pub struct BaseTrainer {
    params: BaseParams,
    mask: FreezeMask,
    opt: AdamW,
    cfg: TrainConfig,
    step: usize,
}

impl BaseTrainer {
    pub fn new(params: BaseParams, mask: FreezeMask, cfg: TrainConfig) -> Self {
        let opt = AdamW::new(&params, &mask, AdamHyper::default());
        BaseTrainer {
            params,
            mask,
            opt,
            cfg,
            step: 0,
        }
    }

    pub fn params(&self) -> &BaseParams {
        &self.params
    }

    pub fn into_params(self) -> BaseParams {
        self.params
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn step_batch(&mut self, batch: &[Vec<usize>]) -> Result<StepStats> {
        let counts: Vec<usize> = batch.iter().map(|s| s.len().saturating_sub(1)).collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(TrainError::EmptyBatch);
        }
        let lr = lr_schedule(self.step, self.cfg.steps, self.cfg.warmup_ratio, self.cfg.learning_rate);

        let mut grads = GradAccum::new(&self.params, &self.mask);
        let mut weighted_loss = 0.0;
        for (seq, &count) in batch.iter().zip(&counts) {
            if count == 0 {
                continue;
            }
            let targets = next_token_targets(seq);
            let mut tape = Tape::new();
            let bf = forward_base(&mut tape, &self.params, seq)?;
            let loss = tape.cross_entropy(bf.logits, &targets)?;
            weighted_loss += tape.value(loss).at(0, 0) * count as f64;
            let g = tape.backward(loss)?;
            grads.accumulate(&g, &bf.binding, count as f64 / total as f64)?;
        }

        let loss = weighted_loss / total as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.step,
                loss,
            });
        }
        self.opt.step(&mut self.params, &grads, lr)?;
        let stats = StepStats {
            step: self.step,
            loss,
            lr,
            tokens: total,
            route_fraction: None,
        };
        self.step += 1;
        Ok(stats)
    }

    pub fn run(
        &mut self,
        corpus: &[Vec<usize>],
        mut on_step: impl FnMut(&StepStats, &BaseParams) -> Result<()>,
    ) -> Result<()> {
        let mut rng = init_rng(self.cfg.seed);
        while self.step < self.cfg.steps {
            let batch = sample_batch(corpus, self.cfg.batch_size, &mut rng)?;
            let stats = self.step_batch(&batch)?;
            on_step(&stats, &self.params)?;
        }
        Ok(())
    }
}

pub(crate) fn next_token_targets(seq: &[usize]) -> Vec<Option<usize>> {
    let mut targets: Vec<Option<usize>> = seq[1..].iter().map(|&t| Some(t)).collect();
    targets.push(None);
    targets
}

fn sample_batch(
    corpus: &[Vec<usize>],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    Ok((0..batch_size)
        .map(|_| corpus[rng.gen_range(0..corpus.len())].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{upscale_model, Collaborative, InitKind, ModelConfig, UpscalePlan};
    use crate::numerics::Array2;

    fn small_config() -> ModelConfig {
        ModelConfig {
            vocab: 12,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            head_dim: 8,
            d_ff: 32,
            max_seq: 16,
        }
    }

    fn small_plan() -> UpscalePlan {
        UpscalePlan {
            d_up: 8,
            d_ff_up: 16,
            init_w21: InitKind::Svd,
            init_w22: InitKind::Zero,
            l_fp: 0,
            collaborative: Collaborative { mha: true, ffn: true },
            tau: 0.99,
            seed: 5,
        }
    }

    fn alternating_corpus(len: usize, n: usize) -> Vec<Vec<usize>> {
        (0..n)
            .map(|s| (0..len).map(|i| (i + s) % 2).collect())
            .collect()
    }

    #[test]
    fn preserve_training_never_moves_the_original_logits() {
        let base = BaseParams::init(&small_config(), 8).unwrap();
        let (model, _) = upscale_model(&base, &small_plan()).unwrap();
        let probe: Vec<usize> = vec![3, 1, 4, 1, 5, 9, 2, 6];

        let mut tape = Tape::new();
        let base_fwd = forward_base(&mut tape, &base, &probe).unwrap();
        let base_logits = tape.value(base_fwd.logits).clone();
        let targets = next_token_targets(&probe);
        let base_loss = {
            let node = tape.cross_entropy(base_fwd.logits, &targets).unwrap();
            tape.value(node).at(0, 0)
        };

        let cfg = TrainConfig {
            steps: 30,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut trainer = UpTrainer::new(model, TrainMode::Preserve, cfg);
        trainer.run(&alternating_corpus(12, 4), |_, _| Ok(())).unwrap();

        let mut tape = Tape::new();
        let uf = forward_upscaled(&mut tape, trainer.model(), &probe, true).unwrap();
        assert!(tape.value(uf.z).bit_eq(&base_logits));
        let loss_node = tape.cross_entropy(uf.logits, &targets).unwrap();
        let loss = tape.value(loss_node).at(0, 0);
        assert!((loss - base_loss).abs() < 1e-12);
    }

    #[test]
    fn adapt_memorizes_a_repeating_corpus() {
        let base = BaseParams::init(&small_config(), 8).unwrap();
        let (model, _) = upscale_model(&base, &small_plan()).unwrap();
        let cfg = TrainConfig {
            steps: 500,
            batch_size: 2,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let mut trainer = UpTrainer::new(model, TrainMode::Adapt, cfg);
        let mut last = f64::INFINITY;
        trainer
            .run(&alternating_corpus(16, 1), |s, _| {
                last = s.loss;
                Ok(())
            })
            .unwrap();
        assert!(last < 0.1, "final adapt loss {last:.4} nats");
    }

    #[test]
    fn route_at_tau_one_reproduces_adapt_bit_for_bit() {
        let base = BaseParams::init(&small_config(), 8).unwrap();
        let (model, _) = upscale_model(&base, &small_plan()).unwrap();
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let corpus = alternating_corpus(10, 3);

        let mut adapt = UpTrainer::new(model.clone(), TrainMode::Adapt, cfg.clone());
        let mut adapt_losses = Vec::new();
        adapt
            .run(&corpus, |s, _| {
                adapt_losses.push(s.loss.to_bits());
                Ok(())
            })
            .unwrap();

        let mut route = UpTrainer::new(model, TrainMode::Route { tau: 1.0 }, cfg);
        let mut route_losses = Vec::new();
        let mut fractions = Vec::new();
        route
            .run(&corpus, |s, _| {
                route_losses.push(s.loss.to_bits());
                fractions.push(s.route_fraction.unwrap());
                Ok(())
            })
            .unwrap();

        assert_eq!(adapt_losses, route_losses);
        assert!(fractions.iter().all(|&f| f == 0.0));
        let (a, r) = (adapt.into_model(), route.into_model());
        for key in a.keys() {
            assert!(a.param(key).bit_eq(r.param(key)), "{} diverged", key.name());
        }
    }

    #[test]
    fn fresh_route_sends_every_token_to_preserve() {
        let base = BaseParams::init(&small_config(), 8).unwrap();
        let (model, _) = upscale_model(&base, &small_plan()).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut trainer = UpTrainer::new(model, TrainMode::Route { tau: 0.99 }, cfg);
        let stats = trainer.step_batch(&alternating_corpus(8, 2)).unwrap();
        assert_eq!(stats.route_fraction, Some(1.0));
    }

    #[test]
    fn batches_without_targets_are_rejected() {
        let base = BaseParams::init(&small_config(), 8).unwrap();
        let (model, _) = upscale_model(&base, &small_plan()).unwrap();
        let mut trainer = UpTrainer::new(model, TrainMode::Adapt, TrainConfig::default());
        let err = trainer.step_batch(&[vec![1], vec![2]]).unwrap_err();
        assert!(matches!(err, TrainError::EmptyBatch));
    }

    #[test]
    fn base_trainer_reduces_loss_and_respects_its_mask() {
        let config = small_config();
        let params = BaseParams::init(&config, 2).unwrap();
        let embed_before: Array2 = params.embed.clone();
        // Freeze the embedding, train everything else.
        let mask = crate::learning::build_base_mask(&params, |k| k != crate::model::ParamKey::Embed);
        let cfg = TrainConfig {
            steps: 120,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut trainer = BaseTrainer::new(params, mask, cfg);
        let mut first = None;
        let mut last = f64::NAN;
        trainer
            .run(&alternating_corpus(12, 4), |s, _| {
                first.get_or_insert(s.loss);
                last = s.loss;
                Ok(())
            })
            .unwrap();
        assert!(last < first.unwrap());
        assert!(trainer.params().embed.bit_eq(&embed_before));
    }
}
