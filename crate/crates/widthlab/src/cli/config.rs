//! Config resolution: embedded defaults, optional TOML file, environment
//! overrides, then `--set` overrides, in that order of increasing priority.
//!
//! The resolved config is a single tree printable with `print-config`.
//! All randomness derives from the top-level `seed`: per-section seed
//! fields (plan, train, data, theory) are overwritten with it during
//! resolution, so the printed config shows exactly what a run uses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CliError, Result};
use crate::bench::DomainConfig;
use crate::learning::TrainConfig;
use crate::model::{ModelConfig, UpscalePlan};
use crate::theory::{CLSimConfig, SweepParams};

/// Environment variables with this prefix override config keys before
/// `--set` does. `__` separates path segments: `WIDTHLAB_TRAIN__STEPS=50`
/// sets `train.steps`.
pub const ENV_PREFIX: &str = "WIDTHLAB_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabConfig {
    /// Master seed feeding every stage's generator.
    pub seed: u64,
    pub model: ModelConfig,
    pub plan: UpscalePlan,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub theory: TheorySection,
    pub sweep: SweepSection,
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    /// One of `preserve`, `adapt`, `route`. Route reads its threshold from
    /// the checkpoint's plan.
    pub mode: String,
    #[serde(flatten)]
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    /// `domains` for the two-domain bigram corpora, `bios` for the
    /// biography question-answering corpora.
    pub kind: String,
    /// Population size when `kind = "bios"`.
    pub bios_n: usize,
    pub domains: DomainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    /// Step stamped on the emitted record.
    pub step: usize,
    /// Score upscaled checkpoints behind the token router.
    pub routed: bool,
    /// Held-out sequences probed for per-layer representation cosines.
    pub rep_probes: usize,
    /// Cap per held-out corpus; zero means score everything.
    pub max_sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySection {
    /// Random upscaled residual nets checked bitwise for preservation.
    pub preservation_instances: usize,
    /// Monte-Carlo instances for the output-shift bound.
    pub bound_instances: usize,
    pub sweep: SweepParams,
    pub clsim: CLSimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    /// One of `l_fp`, `tau`, `init`.
    pub parameter: String,
    /// Values to sweep, as strings; empty selects the parameter's default
    /// grid. `init` values pair the block inits as `w21:w22`.
    pub values: Vec<String>,
    /// Training steps per swept value (`tau` and `init` sweeps).
    pub steps: usize,
}

/// Artifact file names, resolved relative to `--out` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoSection {
    pub train_a: String,
    pub train_b: String,
    pub heldout_a: String,
    pub heldout_b: String,
    pub qa_task0: String,
    pub qa_task1: String,
    pub base_checkpoint: String,
    pub upscaled_checkpoint: String,
    pub trained_checkpoint: String,
    /// Checkpoint the `eval` command scores.
    pub eval_checkpoint: String,
    pub pretrain_metrics: String,
    pub train_metrics: String,
    pub eval_records: String,
    pub theory_report: String,
    pub shift_records: String,
    pub lfp_sweep: String,
    pub sweep_table: String,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            seed: 0,
            model: ModelConfig::desk_default(),
            plan: UpscalePlan::desk_default(),
            train: TrainSection {
                mode: "adapt".into(),
                config: TrainConfig::default(),
            },
            data: DataSection {
                kind: "domains".into(),
                bios_n: 2000,
                domains: DomainConfig::default(),
            },
            eval: EvalSection {
                step: 0,
                routed: false,
                rep_probes: 8,
                max_sequences: 0,
            },
            theory: TheorySection {
                preservation_instances: 1000,
                bound_instances: 200,
                sweep: SweepParams::default(),
                clsim: CLSimConfig::default(),
            },
            sweep: SweepSection {
                parameter: "l_fp".into(),
                values: Vec::new(),
                steps: 40,
            },
            io: IoSection {
                train_a: "train_a.json".into(),
                train_b: "train_b.json".into(),
                heldout_a: "heldout_a.json".into(),
                heldout_b: "heldout_b.json".into(),
                qa_task0: "qa_task0.json".into(),
                qa_task1: "qa_task1.json".into(),
                base_checkpoint: "base.ckpt".into(),
                upscaled_checkpoint: "upscaled.ckpt".into(),
                trained_checkpoint: "trained.ckpt".into(),
                eval_checkpoint: "trained.ckpt".into(),
                pretrain_metrics: "pretrain_metrics.jsonl".into(),
                train_metrics: "train_metrics.jsonl".into(),
                eval_records: "eval.jsonl".into(),
                theory_report: "theory_report.json".into(),
                shift_records: "shift_records.jsonl".into(),
                lfp_sweep: "lfp_sweep.csv".into(),
                sweep_table: "sweep.csv".into(),
            },
        }
    }
}

impl LabConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    fn propagate_seed(&mut self) {
        self.plan.seed = self.seed;
        self.train.config.seed = self.seed;
        self.data.domains.seed = self.seed;
        self.theory.sweep.seed = self.seed;
        self.theory.clsim.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.plan.validate(&self.model)?;
        if !["preserve", "adapt", "route"].contains(&self.train.mode.as_str()) {
            return Err(CliError::ConfigSchema(format!(
                "train.mode `{}` is not one of preserve, adapt, route",
                self.train.mode
            )));
        }
        let t = &self.train.config;
        if t.steps == 0 || t.batch_size == 0 || t.log_every == 0 {
            return Err(CliError::ConfigSchema(
                "train.steps, train.batch_size, and train.log_every must be positive".into(),
            ));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(CliError::ConfigSchema(format!(
                "train.learning_rate {} must be finite and positive",
                t.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&t.warmup_ratio) {
            return Err(CliError::ConfigSchema(format!(
                "train.warmup_ratio {} outside [0, 1]",
                t.warmup_ratio
            )));
        }
        if !["domains", "bios"].contains(&self.data.kind.as_str()) {
            return Err(CliError::ConfigSchema(format!(
                "data.kind `{}` is not one of domains, bios",
                self.data.kind
            )));
        }
        if self.data.bios_n == 0 {
            return Err(CliError::ConfigSchema("data.bios_n must be positive".into()));
        }
        if self.theory.preservation_instances == 0 || self.theory.bound_instances == 0 {
            return Err(CliError::ConfigSchema(
                "theory instance counts must be positive".into(),
            ));
        }
        if !["l_fp", "tau", "init"].contains(&self.sweep.parameter.as_str()) {
            return Err(CliError::ConfigSchema(format!(
                "sweep.parameter `{}` is not one of l_fp, tau, init",
                self.sweep.parameter
            )));
        }
        if self.sweep.steps == 0 {
            return Err(CliError::ConfigSchema("sweep.steps must be positive".into()));
        }
        Ok(())
    }
}

/// Resolves the effective config for one run.
pub fn resolve_config(
    file: Option<&Path>,
    seed_flag: Option<u64>,
    sets: &[String],
) -> Result<LabConfig> {
    let mut table = defaults_table();
    if let Some(path) = file {
        if !path.exists() {
            return Err(CliError::MissingArtifact(format!(
                "config file {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)?;
        let overlay: toml::Table = text
            .parse()
            .map_err(|e| CliError::ConfigSchema(format!("{}: {e}", path.display())))?;
        merge(&mut table, overlay, "")?;
    }
    for (key, value) in env_overrides(std::env::vars()) {
        set_dotted(&mut table, &key, parse_value(&value))?;
    }
    for set in sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| CliError::ConfigSchema(format!("--set `{set}` is not KEY=VALUE")))?;
        set_dotted(&mut table, key.trim(), parse_value(value))?;
    }
    if let Some(seed) = seed_flag {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    let mut cfg: LabConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::ConfigSchema(e.to_string()))?;
    cfg.propagate_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn defaults_table() -> toml::Table {
    match toml::Value::try_from(LabConfig::default()).expect("defaults serialize") {
        toml::Value::Table(t) => t,
        _ => unreachable!("a struct serializes to a table"),
    }
}

/// Overlays `overlay` onto `target`, recursing through tables. Keys absent
/// from the defaults are schema violations, which catches typos early.
fn merge(target: &mut toml::Table, overlay: toml::Table, path: &str) -> Result<()> {
    for (key, value) in overlay {
        let dotted = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match target.get_mut(&key) {
            None => {
                return Err(CliError::ConfigSchema(format!(
                    "unknown config key `{dotted}`"
                )))
            }
            Some(slot) => match (slot, value) {
                (toml::Value::Table(t), toml::Value::Table(o)) => merge(t, o, &dotted)?,
                (slot, value) => *slot = value,
            },
        }
    }
    Ok(())
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let segments: Vec<&str> = key.split('.').collect();
    let mut current = table;
    for segment in &segments[..segments.len() - 1] {
        current = match current.get_mut(*segment) {
            Some(toml::Value::Table(t)) => t,
            _ => {
                return Err(CliError::ConfigSchema(format!(
                    "unknown config key `{key}`"
                )))
            }
        };
    }
    let last = *segments.last().expect("split yields at least one segment");
    if !current.contains_key(last) {
        return Err(CliError::ConfigSchema(format!(
            "unknown config key `{key}`"
        )));
    }
    current.insert(last.to_string(), value);
    Ok(())
}

/// A value parses as TOML where possible (`3`, `0.5`, `true`, `[1, 2]`),
/// falling back to a plain string (`route`, `svd`).
fn parse_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("wrapped key exists"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Translates prefixed environment variables into dotted overrides, sorted
/// by key so application order is deterministic.
fn env_overrides(vars: impl Iterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX).map(|rest| {
                let key = rest
                    .split("__")
                    .map(|s| s.to_ascii_lowercase())
                    .collect::<Vec<_>>()
                    .join(".");
                (key, v)
            })
        })
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_validate() {
        let cfg = resolve_config(None, None, &[]).unwrap();
        assert_eq!(cfg, {
            let mut c = LabConfig::default();
            c.propagate_seed();
            c
        });
    }

    #[test]
    fn file_env_and_set_layers_stack_in_priority_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lab.toml");
        std::fs::write(&path, "seed = 3\n[train]\nsteps = 7\nmode = \"route\"\n").unwrap();

        let cfg = resolve_config(Some(&path), None, &[]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.config.steps, 7);
        assert_eq!(cfg.train.mode, "route");
        assert_eq!(cfg.plan.seed, 3, "section seeds follow the master seed");

        let cfg = resolve_config(
            Some(&path),
            Some(9),
            &["train.steps=11".into(), "plan.tau=0.5".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9, "--seed beats the file");
        assert_eq!(cfg.train.config.steps, 11, "--set beats the file");
        assert_eq!(cfg.plan.tau, 0.5);
        assert_eq!(cfg.train.config.seed, 9);
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lab.toml");
        std::fs::write(&path, "[train]\nstep = 7\n").unwrap();
        let err = resolve_config(Some(&path), None, &[]).unwrap_err();
        assert!(matches!(err, CliError::ConfigSchema(_)), "{err}");
        assert!(err.to_string().contains("train.step"));

        let err = resolve_config(None, None, &["trian.steps=7".into()]).unwrap_err();
        assert!(matches!(err, CliError::ConfigSchema(_)), "{err}");
    }

    #[test]
    fn set_values_carry_toml_types_with_string_fallback() {
        let cfg = resolve_config(
            None,
            None,
            &[
                "train.steps=25".into(),
                "plan.tau=0.75".into(),
                "plan.init_w21=random".into(),
                "eval.routed=true".into(),
                "sweep.values=[\"0.9\", \"1.0\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.config.steps, 25);
        assert_eq!(cfg.plan.tau, 0.75);
        assert_eq!(cfg.plan.init_w21, crate::model::InitKind::Random);
        assert!(cfg.eval.routed);
        assert_eq!(cfg.sweep.values, vec!["0.9", "1.0"]);
    }

    #[test]
    fn type_mismatches_are_schema_errors() {
        let err = resolve_config(None, None, &["train.steps=fast".into()]).unwrap_err();
        assert!(matches!(err, CliError::ConfigSchema(_)), "{err}");
        let err = resolve_config(None, None, &["train.mode".into()]).unwrap_err();
        assert!(matches!(err, CliError::ConfigSchema(_)), "{err}");
        let err = resolve_config(None, None, &["train.mode=paint".into()]).unwrap_err();
        assert!(matches!(err, CliError::ConfigSchema(_)), "{err}");
    }

    #[test]
    fn env_prefix_translates_double_underscores_to_dots() {
        let vars = vec![
            ("WIDTHLAB_TRAIN__STEPS".to_string(), "33".to_string()),
            ("WIDTHLAB_SEED".to_string(), "4".to_string()),
            ("PATH".to_string(), "/usr/bin".to_string()),
        ];
        let pairs = env_overrides(vars.into_iter());
        assert_eq!(
            pairs,
            vec![
                ("seed".to_string(), "4".to_string()),
                ("train.steps".to_string(), "33".to_string()),
            ]
        );
    }

    #[test]
    fn printed_config_round_trips() {
        let cfg = resolve_config(None, Some(17), &["data.kind=bios".into()]).unwrap();
        let text = cfg.to_toml();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resolved.toml");
        std::fs::write(&path, &text).unwrap();
        let back = resolve_config(Some(&path), None, &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
