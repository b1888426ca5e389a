//! Metrics: perplexity, hard first-token accuracy, and per-layer cosine
//! similarity of the original-part hidden states.

use super::bios::QaItem;
use super::{BenchError, Result};
use crate::learning::{cosine_rows, next_token_targets, route_logits, LogitBundle};
use crate::model::{
    forward_base, forward_bundle, forward_upscaled, BaseParams, ModelConfig, UpscaledModel,
};
use crate::numerics::{Array2, Tape};
use serde::{Deserialize, Serialize};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

/// A model under evaluation. The upscaled model can be scored either as a
/// single function (logits `z + zup`) or behind its token router.
pub enum EvalModel<'a> {
    Base(&'a BaseParams),
    Upscaled(&'a UpscaledModel),
    Routed(&'a UpscaledModel, f64),
}

impl EvalModel<'_> {
    pub fn config(&self) -> &ModelConfig {
        match self {
            EvalModel::Base(p) => &p.config,
            EvalModel::Upscaled(m) | EvalModel::Routed(m, _) => &m.config,
        }
    }

    /// Next-token logits for one sequence, tokens x vocab.
    pub fn logits(&self, tokens: &[usize]) -> Result<Array2> {
        let mut tape = Tape::new();
        match self {
            EvalModel::Base(p) => {
                let f = forward_base(&mut tape, p, tokens)?;
                Ok(tape.value(f.logits).clone())
            }
            EvalModel::Upscaled(m) => {
                let f = forward_upscaled(&mut tape, m, tokens, false)?;
                Ok(tape.value(f.logits).clone())
            }
            EvalModel::Routed(m, tau) => {
                let f = forward_bundle(&mut tape, m, tokens)?;
                let mut bundle = LogitBundle::new(
                    tape.value(f.z_preserve).clone(),
                    tape.value(f.zup_preserve).clone(),
                    tape.value(f.z_adapt).clone(),
                    tape.value(f.zup_adapt).clone(),
                )?;
                Ok(route_logits(&mut bundle, *tau)?)
            }
        }
    }

    /// Original-part hidden state after each layer. The router only acts on
    /// logits, so a routed model's layer states are those of its adapting
    /// pass.
    fn original_hiddens(&self, tokens: &[usize]) -> Result<Vec<Array2>> {
        let mut tape = Tape::new();
        match self {
            EvalModel::Base(p) => {
                let f = forward_base(&mut tape, p, tokens)?;
                Ok(f.hiddens.iter().map(|&h| tape.value(h).clone()).collect())
            }
            EvalModel::Upscaled(m) | EvalModel::Routed(m, _) => {
                let f = forward_upscaled(&mut tape, m, tokens, false)?;
                Ok(f.hiddens
                    .iter()
                    .map(|&(h, _)| tape.value(h).clone())
                    .collect())
            }
        }
    }
}

/// Sum of next-token negative log likelihoods and the target count.
fn nll_sum(logits: &Array2, targets: &[Option<usize>]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = t else { continue };
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        sum += m + z.ln() - row[*t];
        n += 1;
    }
    (sum, n)
}

/// `exp` of the mean per-token negative log likelihood over the corpus.
pub fn perplexity(model: &EvalModel, corpus: &[Vec<usize>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in corpus {
        if seq.len() < 2 {
            continue;
        }
        let logits = model.logits(seq)?;
        let (s, n) = nll_sum(&logits, &next_token_targets(seq));
        total += s;
        count += n;
    }
    if count == 0 {
        return Err(BenchError::Contract(
            "perplexity needs at least one next-token target".into(),
        ));
    }
    Ok((total / count as f64).exp())
}

/// Fraction of questions whose top-predicted token at the answer position
/// matches the gold answer. The answer token is part of the input, but
/// causal attention keeps it out of the position that predicts it.
pub fn hard_first_token_accuracy(model: &EvalModel, qa: &[QaItem]) -> Result<f64> {
    if qa.is_empty() {
        return Err(BenchError::Contract(
            "accuracy needs at least one question".into(),
        ));
    }
    let mut hits = 0usize;
    for item in qa {
        if item.answer_pos == 0 || item.answer_pos >= item.tokens.len() {
            return Err(BenchError::Contract(format!(
                "answer position {} outside a sequence of {} tokens",
                item.answer_pos,
                item.tokens.len()
            )));
        }
        let logits = model.logits(&item.tokens)?;
        let row = logits.row(item.answer_pos - 1);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("nonempty vocabulary");
        if argmax == item.tokens[item.answer_pos] {
            hits += 1;
        }
    }
    Ok(hits as f64 / qa.len() as f64)
}

/// Mean per-token cosine between the two models' original-part hidden
/// states, one value per layer. Bit-identical states score exactly 1.
pub fn representation_cosine(
    current: &EvalModel,
    reference: &EvalModel,
    probes: &[Vec<usize>],
) -> Result<Vec<f64>> {
    if current.config() != reference.config() {
        return Err(BenchError::Contract(
            "representation cosine needs models sharing one base configuration".into(),
        ));
    }
    let layers = current.config().n_layers;
    let mut sums = vec![0.0f64; layers];
    let mut tokens = 0usize;
    for probe in probes {
        if probe.is_empty() {
            continue;
        }
        let hc = current.original_hiddens(probe)?;
        let hr = reference.original_hiddens(probe)?;
        for l in 0..layers {
            sums[l] += cosine_rows(&hc[l], &hr[l]).into_iter().sum::<f64>();
        }
        tokens += probe.len();
    }
    if tokens == 0 {
        return Err(BenchError::Contract(
            "representation cosine needs at least one probe token".into(),
        ));
    }
    Ok(sums.into_iter().map(|s| s / tokens as f64).collect())
}

/// One evaluation snapshot, appended to the metrics stream as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task0_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task1_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub forget_ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub learn_ppl: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rep_cosine: Vec<f64>,
}

impl EvalRecord {
    pub fn new(step: usize) -> Self {
        EvalRecord {
            step,
            task0_acc: None,
            task1_acc: None,
            forget_ppl: None,
            learn_ppl: None,
            rep_cosine: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, acc) in [("task0_acc", self.task0_acc), ("task1_acc", self.task1_acc)] {
            if let Some(a) = acc {
                if !(0.0..=1.0).contains(&a) {
                    return Err(BenchError::Contract(format!("{name} {a} outside [0, 1]")));
                }
            }
        }
        for (name, ppl) in [("forget_ppl", self.forget_ppl), ("learn_ppl", self.learn_ppl)] {
            if let Some(p) = ppl {
                if !(p >= 1.0) {
                    return Err(BenchError::Contract(format!("{name} {p} below 1")));
                }
            }
        }
        if self.rep_cosine.iter().any(|c| !(-1.0..=1.0000000000000002).contains(c)) {
            return Err(BenchError::Contract("rep_cosine outside [-1, 1]".into()));
        }
        Ok(())
    }

    pub fn append_to(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", serde_json::to_string(self)?)?;
        f.flush()?;
        Ok(())
    }
}

pub fn read_eval_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::gen_biographies;
    use crate::learning::{build_base_mask, BaseTrainer, TrainConfig};
    use crate::model::{upscale_model, UpscalePlan};

    fn tiny_config(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            head_dim: 8,
            d_ff: 32,
            max_seq: 16,
        }
    }

    fn tiny_plan() -> UpscalePlan {
        UpscalePlan {
            d_up: 8,
            d_ff_up: 16,
            l_fp: 1,
            ..UpscalePlan::desk_default()
        }
    }

    #[test]
    fn uniform_logits_give_vocabulary_perplexity() {
        let mut params = BaseParams::init(&tiny_config(50), 0).unwrap();
        params.output = Array2::zeros(50, 16);
        let model = EvalModel::Base(&params);
        let corpus = vec![vec![1, 2, 3, 4, 5], vec![7, 8, 9]];
        let ppl = perplexity(&model, &corpus).unwrap();
        assert!((ppl - 50.0).abs() < 1e-9, "{ppl}");
    }

    #[test]
    fn fresh_upscale_reports_base_metrics_exactly() {
        let data = gen_biographies(4, 9).unwrap();
        let base = BaseParams::init(&tiny_config(data.vocab.size()), 1).unwrap();
        let (up, _) = upscale_model(&base, &tiny_plan()).unwrap();

        let qa = data.qa_items(&data.persons);
        let seqs = data.qa_sequences(&data.persons);
        let b = EvalModel::Base(&base);
        let u = EvalModel::Upscaled(&up);
        let r = EvalModel::Routed(&up, 0.99);

        assert_eq!(
            perplexity(&b, &seqs).unwrap(),
            perplexity(&u, &seqs).unwrap()
        );
        assert_eq!(
            perplexity(&b, &seqs).unwrap(),
            perplexity(&r, &seqs).unwrap()
        );
        assert_eq!(
            hard_first_token_accuracy(&b, &qa).unwrap(),
            hard_first_token_accuracy(&u, &qa).unwrap()
        );
        let cos = representation_cosine(&u, &b, &seqs[..4]).unwrap();
        assert_eq!(cos, vec![1.0; 2]);
    }

    #[test]
    fn memorization_drives_accuracy_to_one() {
        let data = gen_biographies(1, 5).unwrap();
        let qa = data.qa_items(&data.persons);
        let corpus = data.qa_sequences(&data.persons);
        let params = BaseParams::init(&tiny_config(data.vocab.size()), 2).unwrap();

        let before = hard_first_token_accuracy(&EvalModel::Base(&params), &qa).unwrap();
        assert!(before < 0.5, "untrained accuracy {before}");

        let mask = build_base_mask(&params, |_| true);
        let cfg = TrainConfig {
            steps: 400,
            batch_size: 6,
            learning_rate: 3e-3,
            seed: 0,
            ..TrainConfig::default()
        };
        let mut trainer = BaseTrainer::new(params, mask, cfg);
        trainer.run(&corpus, |_, _| Ok(())).unwrap();
        let trained = trainer.into_params();

        let model = EvalModel::Base(&trained);
        assert_eq!(hard_first_token_accuracy(&model, &qa).unwrap(), 1.0);
        assert!(perplexity(&model, &corpus).unwrap() < 1.6);
    }

    #[test]
    fn empty_sets_and_mismatched_models_are_contract_errors() {
        let params = BaseParams::init(&tiny_config(30), 0).unwrap();
        let other = BaseParams::init(&tiny_config(31), 0).unwrap();
        let m = EvalModel::Base(&params);
        assert!(matches!(
            perplexity(&m, &[]),
            Err(BenchError::Contract(_))
        ));
        assert!(matches!(
            hard_first_token_accuracy(&m, &[]),
            Err(BenchError::Contract(_))
        ));
        assert!(matches!(
            representation_cosine(&m, &EvalModel::Base(&other), &[vec![1, 2]]),
            Err(BenchError::Contract(_))
        ));
        assert!(matches!(
            representation_cosine(&m, &EvalModel::Base(&params), &[]),
            Err(BenchError::Contract(_))
        ));
    }

    #[test]
    fn eval_records_round_trip_and_enforce_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("evals.jsonl");
        let mut a = EvalRecord::new(0);
        a.task0_acc = Some(0.75);
        a.rep_cosine = vec![1.0, 0.5];
        let mut b = EvalRecord::new(10);
        b.forget_ppl = Some(3.5);
        b.learn_ppl = Some(2.0);
        a.append_to(&path).unwrap();
        b.append_to(&path).unwrap();
        assert_eq!(read_eval_records(&path).unwrap(), vec![a, b]);

        let mut bad = EvalRecord::new(1);
        bad.task1_acc = Some(1.5);
        assert!(matches!(bad.validate(), Err(BenchError::Contract(_))));
        let mut bad = EvalRecord::new(1);
        bad.forget_ppl = Some(0.5);
        assert!(matches!(bad.validate(), Err(BenchError::Contract(_))));
    }
}
