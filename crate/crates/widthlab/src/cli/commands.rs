//! One function per subcommand. Every command resolves artifact paths
//! against the output directory, recreates its outputs from scratch, and
//! writes a manifest naming everything it read and wrote.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CliError, LabConfig, Manifest, Result};
use crate::bench::{
    gen_biographies, gen_domain_corpora, hard_first_token_accuracy, perplexity,
    representation_cosine, EvalModel, EvalRecord, QaItem,
};
use crate::learning::{
    build_base_mask, build_freeze_mask, BaseTrainer, FreezeMask, MetricRecord, MetricsWriter,
    StepStats, TrainConfig, TrainMode, UpTrainer,
};
use crate::model::{
    checkpoint_kind, load_base, load_upscaled, save_base, save_upscaled, upscale_model,
    BaseParams, CheckpointKind, InitKind, UpscaledModel,
};
use crate::theory::{cl_simulate, run_bound_scan, run_lfp_sweep, run_preservation_scan};

fn artifact_path(out: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(format!(
            "{what} at {}",
            path.display()
        )))
    }
}

/// Streams append, so a rerun must not inherit records from an older run.
fn fresh(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer(&mut f, value)
        .map_err(|e| CliError::Run(format!("encode {}: {e}", path.display())))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    require(path, what)?;
    let f = File::open(path)?;
    serde_json::from_reader(f).map_err(|e| CliError::Data(format!("{what}: {e}")))
}

fn read_corpus(path: &Path, what: &str) -> Result<Vec<Vec<usize>>> {
    let corpus: Vec<Vec<usize>> = read_json(path, what)?;
    if corpus.is_empty() {
        return Err(CliError::Data(format!("{what} {} is empty", path.display())));
    }
    Ok(corpus)
}

fn cap(corpus: &[Vec<usize>], limit: usize) -> &[Vec<usize>] {
    if limit == 0 || limit >= corpus.len() {
        corpus
    } else {
        &corpus[..limit]
    }
}

fn train_mode(name: &str, tau: f64) -> Result<TrainMode> {
    match name {
        "preserve" => Ok(TrainMode::Preserve),
        "adapt" => Ok(TrainMode::Adapt),
        "route" => Ok(TrainMode::Route { tau }),
        other => Err(CliError::ConfigSchema(format!(
            "unknown train mode `{other}`"
        ))),
    }
}

fn parse_init(name: &str) -> Result<InitKind> {
    match name {
        "zero" => Ok(InitKind::Zero),
        "random" => Ok(InitKind::Random),
        "svd" => Ok(InitKind::Svd),
        other => Err(CliError::ConfigSchema(format!(
            "unknown init kind `{other}`"
        ))),
    }
}

fn count_params(model: &UpscaledModel, mask: &FreezeMask) -> (usize, usize) {
    let mut frozen = 0;
    let mut trainable = 0;
    for key in model.keys() {
        let p = model.param(key);
        let n = {
            let (r, c) = p.shape();
            r * c
        };
        if mask.is_trainable(key) {
            trainable += n;
        } else {
            frozen += n;
        }
    }
    (frozen, trainable)
}

fn finish(manifest: Manifest, out: &Path) -> Result<()> {
    for note in &manifest.notes {
        println!("{note}");
    }
    let path = manifest.write(out)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_gen(cfg: &LabConfig, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("gen", cfg);
    match cfg.data.kind.as_str() {
        "domains" => {
            let corpora = gen_domain_corpora(&cfg.data.domains)?;
            for (name, seqs) in [
                (&cfg.io.train_a, &corpora.train_a),
                (&cfg.io.train_b, &corpora.train_b),
                (&cfg.io.heldout_a, &corpora.heldout_a),
                (&cfg.io.heldout_b, &corpora.heldout_b),
            ] {
                let path = artifact_path(out, name);
                write_json(&path, seqs)?;
                manifest.record_output(name, &path)?;
            }
            manifest.note(format!(
                "domain a tokens [{}, {}), domain b tokens [{}, {}), {} shared",
                corpora.range_a.0,
                corpora.range_a.1,
                corpora.range_b.0,
                corpora.range_b.1,
                cfg.data.domains.overlap_tokens()
            ));
        }
        "bios" => {
            let data = gen_biographies(cfg.data.bios_n, cfg.seed)?;
            if data.vocab.size() > cfg.model.vocab {
                return Err(CliError::ConfigSchema(format!(
                    "model.vocab {} is smaller than the biography vocabulary {}",
                    cfg.model.vocab,
                    data.vocab.size()
                )));
            }
            let split = &data.split;
            let mut train_a = data.statements(&split.pretrain);
            train_a.extend(data.statements(&split.task0));
            train_a.extend(data.qa_sequences(&split.task0));
            let mut train_b = data.statements(&split.task1);
            train_b.extend(data.qa_sequences(&split.task1));
            let corpora = [
                (&cfg.io.train_a, train_a),
                (&cfg.io.train_b, train_b),
                (&cfg.io.heldout_a, data.qa_sequences(&split.task0)),
                (&cfg.io.heldout_b, data.qa_sequences(&split.task1)),
            ];
            for (name, seqs) in &corpora {
                let path = artifact_path(out, name);
                write_json(&path, seqs)?;
                manifest.record_output(name, &path)?;
            }
            for (name, items) in [
                (&cfg.io.qa_task0, data.qa_items(&split.task0)),
                (&cfg.io.qa_task1, data.qa_items(&split.task1)),
            ] {
                let path = artifact_path(out, name);
                write_json(&path, &items)?;
                manifest.record_output(name, &path)?;
            }
            manifest.note(format!(
                "{} persons ({} pretrain, {} task0, {} task1), vocabulary {}",
                cfg.data.bios_n,
                split.pretrain.len(),
                split.task0.len(),
                split.task1.len(),
                data.vocab.size()
            ));
        }
        other => {
            return Err(CliError::ConfigSchema(format!(
                "unknown data kind `{other}`"
            )))
        }
    }
    finish(manifest, out)
}

pub fn cmd_pretrain(cfg: &LabConfig, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("pretrain", cfg);
    let corpus_path = artifact_path(out, &cfg.io.train_a);
    let corpus = read_corpus(&corpus_path, "pretraining corpus")?;
    manifest.record_input(&cfg.io.train_a, &corpus_path)?;

    let params = BaseParams::init(&cfg.model, cfg.seed)?;
    let mask = build_base_mask(&params, |_| true);
    let metrics_path = artifact_path(out, &cfg.io.pretrain_metrics);
    fresh(&metrics_path)?;
    let mut writer = MetricsWriter::create(&metrics_path)?;

    let train_cfg = cfg.train.config.clone();
    let (steps, log_every) = (train_cfg.steps, train_cfg.log_every);
    let mut trainer = BaseTrainer::new(params, mask, train_cfg);
    let mut last: Option<StepStats> = None;
    trainer.run(&corpus, |stats, _| {
        last = Some(*stats);
        if stats.step % log_every == 0 || stats.step + 1 == steps {
            let mut rec = MetricRecord::new(stats.step, "pretrain", stats.loss);
            rec.lr = Some(stats.lr);
            writer.append(&rec)?;
        }
        Ok(())
    })?;
    drop(writer);

    let params = trainer.into_params();
    let ckpt_path = artifact_path(out, &cfg.io.base_checkpoint);
    save_base(&ckpt_path, &params)?;
    manifest.record_output(&cfg.io.base_checkpoint, &ckpt_path)?;
    manifest.record_output(&cfg.io.pretrain_metrics, &metrics_path)?;
    let final_loss = last.map(|s| s.loss).unwrap_or(f64::NAN);
    manifest.note(format!(
        "{} parameters, {} steps, final loss {final_loss:.4}",
        params.n_params(),
        steps
    ));
    finish(manifest, out)
}

pub fn cmd_upscale(cfg: &LabConfig, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("upscale", cfg);
    let base_path = artifact_path(out, &cfg.io.base_checkpoint);
    require(&base_path, "base checkpoint")?;
    let base = load_base(&base_path)?;
    manifest.record_input(&cfg.io.base_checkpoint, &base_path)?;

    let (model, warnings) = upscale_model(&base, &cfg.plan)?;
    for w in warnings {
        manifest.note(format!("warning: {w}"));
    }
    let mode = train_mode(&cfg.train.mode, model.plan.tau)?;
    let mask = build_freeze_mask(&model, mode);
    let (frozen, trainable) = count_params(&model, &mask);

    let up_path = artifact_path(out, &cfg.io.upscaled_checkpoint);
    save_upscaled(&up_path, &model)?;
    manifest.record_output(&cfg.io.upscaled_checkpoint, &up_path)?;
    manifest.note(format!(
        "widened d_model {} -> {}, d_ff {} -> {}",
        model.config.d_model,
        model.config.d_model + model.plan.d_up,
        model.config.d_ff,
        model.config.d_ff + model.plan.d_ff_up
    ));
    manifest.note(format!(
        "{frozen} frozen parameters, {trainable} trainable in {} mode",
        cfg.train.mode
    ));
    finish(manifest, out)
}

pub fn cmd_train(cfg: &LabConfig, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("train", cfg);
    let up_path = artifact_path(out, &cfg.io.upscaled_checkpoint);
    require(&up_path, "upscaled checkpoint")?;
    let model = load_upscaled(&up_path)?;
    manifest.record_input(&cfg.io.upscaled_checkpoint, &up_path)?;

    let corpus_path = artifact_path(out, &cfg.io.train_b);
    let corpus = read_corpus(&corpus_path, "continual training corpus")?;
    manifest.record_input(&cfg.io.train_b, &corpus_path)?;

    let mode = train_mode(&cfg.train.mode, model.plan.tau)?;
    let metrics_path = artifact_path(out, &cfg.io.train_metrics);
    fresh(&metrics_path)?;
    let mut writer = MetricsWriter::create(&metrics_path)?;

    let train_cfg = cfg.train.config.clone();
    let (steps, log_every) = (train_cfg.steps, train_cfg.log_every);
    let mut trainer = UpTrainer::new(model, mode, train_cfg);
    let mut last: Option<StepStats> = None;
    trainer.run(&corpus, |stats, _| {
        last = Some(*stats);
        if stats.step % log_every == 0 || stats.step + 1 == steps {
            let mut rec = MetricRecord::new(stats.step, "train", stats.loss);
            rec.lr = Some(stats.lr);
            rec.route_fraction = stats.route_fraction;
            writer.append(&rec)?;
        }
        Ok(())
    })?;
    drop(writer);

    let model = trainer.into_model();
    let trained_path = artifact_path(out, &cfg.io.trained_checkpoint);
    save_upscaled(&trained_path, &model)?;
    manifest.record_output(&cfg.io.trained_checkpoint, &trained_path)?;
    manifest.record_output(&cfg.io.train_metrics, &metrics_path)?;
    let final_loss = last.map(|s| s.loss).unwrap_or(f64::NAN);
    let mut note = format!(
        "{} mode, {} steps, final loss {final_loss:.4}",
        cfg.train.mode, steps
    );
    if let Some(f) = last.and_then(|s| s.route_fraction) {
        note.push_str(&format!(", final preserve fraction {f:.3}"));
    }
    manifest.note(note);
    finish(manifest, out)
}

/// Either model flavor, owned, so `EvalModel` can borrow it uniformly.
enum Loaded {
    Base(BaseParams),
    Up(UpscaledModel),
}

pub fn cmd_eval(cfg: &LabConfig, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("eval", cfg);
    let ckpt_path = artifact_path(out, &cfg.io.eval_checkpoint);
    require(&ckpt_path, "evaluation checkpoint")?;
    let loaded = match checkpoint_kind(&ckpt_path)? {
        CheckpointKind::Base => Loaded::Base(load_base(&ckpt_path)?),
        CheckpointKind::Upscaled => Loaded::Up(load_upscaled(&ckpt_path)?),
    };
    manifest.record_input(&cfg.io.eval_checkpoint, &ckpt_path)?;
    let model = match &loaded {
        Loaded::Base(p) => EvalModel::Base(p),
        Loaded::Up(m) if cfg.eval.routed => EvalModel::Routed(m, m.plan.tau),
        Loaded::Up(m) => EvalModel::Upscaled(m),
    };

    let ha_path = artifact_path(out, &cfg.io.heldout_a);
    let hb_path = artifact_path(out, &cfg.io.heldout_b);
    let heldout_a = read_corpus(&ha_path, "first-domain held-out corpus")?;
    let heldout_b = read_corpus(&hb_path, "second-domain held-out corpus")?;
    manifest.record_input(&cfg.io.heldout_a, &ha_path)?;
    manifest.record_input(&cfg.io.heldout_b, &hb_path)?;
    let fa = cap(&heldout_a, cfg.eval.max_sequences);
    let fb = cap(&heldout_b, cfg.eval.max_sequences);

    let mut record = EvalRecord::new(cfg.eval.step);
    record.forget_ppl = Some(perplexity(&model, fa)?);
    record.learn_ppl = Some(perplexity(&model, fb)?);

    // Question files exist only for biography pipelines.
    for (name, slot) in [
        (&cfg.io.qa_task0, &mut record.task0_acc),
        (&cfg.io.qa_task1, &mut record.task1_acc),
    ] {
        let path = artifact_path(out, name);
        if path.exists() {
            let qa: Vec<QaItem> = read_json(&path, "question set")?;
            *slot = Some(hard_first_token_accuracy(&model, &qa)?);
            manifest.record_input(name, &path)?;
        }
    }

    // Per-layer drift of the original stream against the pretrained base.
    let base_path = artifact_path(out, &cfg.io.base_checkpoint);
    if matches!(loaded, Loaded::Up(_)) && base_path.exists() && cfg.eval.rep_probes > 0 {
        let base = load_base(&base_path)?;
        let probes = &fa[..cfg.eval.rep_probes.min(fa.len())];
        record.rep_cosine = representation_cosine(&model, &EvalModel::Base(&base), probes)?;
        manifest.record_input(&cfg.io.base_checkpoint, &base_path)?;
    }

    let rec_path = artifact_path(out, &cfg.io.eval_records);
    fresh(&rec_path)?;
    record.append_to(&rec_path)?;
    manifest.record_output(&cfg.io.eval_records, &rec_path)?;
    let mut note = format!(
        "forget ppl {:.4}, learn ppl {:.4}",
        record.forget_ppl.unwrap_or(f64::NAN),
        record.learn_ppl.unwrap_or(f64::NAN)
    );
    if let (Some(a0), Some(a1)) = (record.task0_acc, record.task1_acc) {
        note.push_str(&format!(", task0 acc {a0:.3}, task1 acc {a1:.3}"));
    }
    manifest.note(note);
    finish(manifest, out)
}

#[derive(Serialize)]
struct BoundSummary {
    instances: usize,
    first_order_violations: usize,
    raw_violations: usize,
    raw_beyond_cap: usize,
    max_first_order_ratio: f64,
    max_raw_ratio: f64,
}

pub fn cmd_verify_theory(cfg: &LabConfig, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("verify-theory", cfg);
    let t = &cfg.theory;

    let preservation = run_preservation_scan(t.preservation_instances, cfg.seed)?;
    let bound = run_bound_scan(t.bound_instances, cfg.seed)?;
    let sweep = run_lfp_sweep(&t.sweep)?;
    let clsim = cl_simulate(&t.clsim)?;

    let records_path = artifact_path(out, &cfg.io.shift_records);
    {
        let mut f = File::create(&records_path)?;
        for r in &bound.records {
            let line = serde_json::to_string(r)
                .map_err(|e| CliError::Run(format!("encode shift record: {e}")))?;
            writeln!(f, "{line}")?;
        }
        f.flush()?;
    }
    manifest.record_output(&cfg.io.shift_records, &records_path)?;

    let sweep_path = artifact_path(out, &cfg.io.lfp_sweep);
    {
        let mut f = File::create(&sweep_path)?;
        writeln!(f, "l_fp,median_shift")?;
        for (l_fp, shift) in sweep.l_fp.iter().zip(&sweep.median_shift) {
            writeln!(f, "{l_fp},{shift}")?;
        }
        f.flush()?;
    }
    manifest.record_output(&cfg.io.lfp_sweep, &sweep_path)?;

    let bound_summary = BoundSummary {
        instances: bound.instances,
        first_order_violations: bound.first_order_violations,
        raw_violations: bound.raw_violations,
        raw_beyond_cap: bound.raw_beyond_cap,
        max_first_order_ratio: bound.max_first_order_ratio,
        max_raw_ratio: bound.max_raw_ratio,
    };
    #[derive(Serialize)]
    struct TheoryReport<'a> {
        schema: u32,
        preservation: &'a crate::theory::PreservationScan,
        bound: &'a BoundSummary,
        sweep: &'a crate::theory::SweepResult,
        clsim: &'a crate::theory::CLSimReport,
    }
    let report_path = artifact_path(out, &cfg.io.theory_report);
    write_json(
        &report_path,
        &TheoryReport {
            schema: 1,
            preservation: &preservation,
            bound: &bound_summary,
            sweep: &sweep,
            clsim: &clsim,
        },
    )?;
    manifest.record_output(&cfg.io.theory_report, &report_path)?;

    manifest.note(format!(
        "preservation: {} instances, {} bitwise violations",
        preservation.instances, preservation.violations
    ));
    manifest.note(format!(
        "shift bound: {} instances, {} first-order violations, {} beyond the second-order cap, {} raw above bound",
        bound.instances, bound.first_order_violations, bound.raw_beyond_cap, bound.raw_violations
    ));
    manifest.note(format!(
        "frozen-depth sweep: slope {:.4}, r2 {:.4}, monotone {}",
        sweep.slope, sweep.r2, sweep.monotone
    ));
    manifest.note(format!(
        "convergence sim: final standard gap {:.4e}, final routed gap {:.4e}, growth factor {:.4}",
        clsim.final_standard, clsim.final_routed, clsim.eta_beta_plus_one
    ));

    let mut failures = Vec::new();
    if preservation.violations > 0 {
        failures.push(format!(
            "{} preservation violations",
            preservation.violations
        ));
    }
    if bound.first_order_violations > 0 {
        failures.push(format!(
            "{} first-order bound violations",
            bound.first_order_violations
        ));
    }
    if bound.raw_beyond_cap > 0 {
        failures.push(format!(
            "{} raw shifts beyond the second-order cap",
            bound.raw_beyond_cap
        ));
    }
    if clsim.final_routed > clsim.final_standard {
        failures.push(format!(
            "routed divergence {} exceeds standard {}",
            clsim.final_routed, clsim.final_standard
        ));
    }
    finish(manifest, out)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failures.join("; ")))
    }
}

pub fn cmd_sweep(cfg: &LabConfig, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("sweep", cfg);
    let table_path = artifact_path(out, &cfg.io.sweep_table);
    let mut table = String::new();

    match cfg.sweep.parameter.as_str() {
        "l_fp" => {
            let result = run_lfp_sweep(&cfg.theory.sweep)?;
            let wanted: Vec<usize> = if cfg.sweep.values.is_empty() {
                result.l_fp.clone()
            } else {
                cfg.sweep
                    .values
                    .iter()
                    .map(|v| {
                        v.parse::<usize>().map_err(|_| {
                            CliError::ConfigSchema(format!("sweep value `{v}` is not an l_fp"))
                        })
                    })
                    .collect::<Result<_>>()?
            };
            table.push_str("l_fp,median_shift\n");
            for (l_fp, shift) in result.l_fp.iter().zip(&result.median_shift) {
                if wanted.contains(l_fp) {
                    table.push_str(&format!("{l_fp},{shift}\n"));
                }
            }
            manifest.note(format!(
                "shift vs frozen depth: slope {:.4}, r2 {:.4}, monotone {}",
                result.slope, result.r2, result.monotone
            ));
        }
        "tau" => {
            let up_path = artifact_path(out, &cfg.io.upscaled_checkpoint);
            require(&up_path, "upscaled checkpoint")?;
            let model = load_upscaled(&up_path)?;
            manifest.record_input(&cfg.io.upscaled_checkpoint, &up_path)?;
            let corpus_path = artifact_path(out, &cfg.io.train_b);
            let corpus = read_corpus(&corpus_path, "continual training corpus")?;
            manifest.record_input(&cfg.io.train_b, &corpus_path)?;

            let taus: Vec<f64> = if cfg.sweep.values.is_empty() {
                vec![0.9, 0.95, 0.99, 1.0]
            } else {
                cfg.sweep
                    .values
                    .iter()
                    .map(|v| {
                        v.parse::<f64>().map_err(|_| {
                            CliError::ConfigSchema(format!("sweep value `{v}` is not a tau"))
                        })
                    })
                    .collect::<Result<_>>()?
            };
            table.push_str("tau,final_loss,preserve_fraction\n");
            for tau in taus {
                let mut m = model.clone();
                m.plan.tau = tau;
                let (loss, fraction) = short_run(
                    m,
                    TrainMode::Route { tau },
                    &cfg.train.config,
                    cfg.sweep.steps,
                    &corpus,
                )?;
                table.push_str(&format!("{tau},{loss},{}\n", fraction.unwrap_or(0.0)));
            }
        }
        "init" => {
            let base_path = artifact_path(out, &cfg.io.base_checkpoint);
            require(&base_path, "base checkpoint")?;
            let base = load_base(&base_path)?;
            manifest.record_input(&cfg.io.base_checkpoint, &base_path)?;
            let corpus_path = artifact_path(out, &cfg.io.train_b);
            let corpus = read_corpus(&corpus_path, "continual training corpus")?;
            manifest.record_input(&cfg.io.train_b, &corpus_path)?;

            let kinds = [InitKind::Zero, InitKind::Random, InitKind::Svd];
            let pairs: Vec<(InitKind, InitKind)> = if cfg.sweep.values.is_empty() {
                kinds
                    .iter()
                    .flat_map(|&a| kinds.iter().map(move |&b| (a, b)))
                    .collect()
            } else {
                cfg.sweep
                    .values
                    .iter()
                    .map(|v| {
                        let (a, b) = v.split_once(':').ok_or_else(|| {
                            CliError::ConfigSchema(format!(
                                "sweep value `{v}` is not an init pair w21:w22"
                            ))
                        })?;
                        Ok((parse_init(a)?, parse_init(b)?))
                    })
                    .collect::<Result<_>>()?
            };
            table.push_str("init_w21,init_w22,final_loss\n");
            for (w21, w22) in pairs {
                let mut plan = cfg.plan.clone();
                plan.init_w21 = w21;
                plan.init_w22 = w22;
                let (model, _) = upscale_model(&base, &plan)?;
                let (loss, _) = short_run(
                    model,
                    TrainMode::Adapt,
                    &cfg.train.config,
                    cfg.sweep.steps,
                    &corpus,
                )?;
                table.push_str(&format!("{w21},{w22},{loss}\n"));
            }
        }
        other => {
            return Err(CliError::ConfigSchema(format!(
                "unknown sweep parameter `{other}`"
            )))
        }
    }

    std::fs::write(&table_path, &table)?;
    manifest.record_output(&cfg.io.sweep_table, &table_path)?;
    finish(manifest, out)
}

/// Trains for `steps` and returns the final loss and, for routed runs, the
/// mean preserve fraction over all steps.
fn short_run(
    model: UpscaledModel,
    mode: TrainMode,
    base_cfg: &TrainConfig,
    steps: usize,
    corpus: &[Vec<usize>],
) -> Result<(f64, Option<f64>)> {
    let cfg = TrainConfig {
        steps,
        ..base_cfg.clone()
    };
    let mut trainer = UpTrainer::new(model, mode, cfg);
    let mut last_loss = f64::NAN;
    let mut fractions = Vec::new();
    trainer.run(corpus, |stats, _| {
        last_loss = stats.loss;
        if let Some(f) = stats.route_fraction {
            fractions.push(f);
        }
        Ok(())
    })?;
    let fraction = (!fractions.is_empty())
        .then(|| fractions.iter().sum::<f64>() / fractions.len() as f64);
    Ok((last_loss, fraction))
}
