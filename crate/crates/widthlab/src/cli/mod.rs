//! Command-line front end: data generation, pretraining, width surgery,
//! continual training, evaluation, theory verification, and sweeps.
//!
//! One command runs per process. Every run resolves a single config
//! (embedded defaults, then an optional TOML file, then `WIDTHLAB_`
//! environment overrides, then repeatable `--set key=value` flags) and
//! writes a manifest with the resolved config and SHA-256 hashes of every
//! file it read or wrote, enough to reproduce the run bit for bit.

mod commands;
mod config;
mod manifest;

pub use config::{resolve_config, LabConfig, ENV_PREFIX};
pub use manifest::{read_manifest, Artifact, Manifest, MANIFEST_SCHEMA_VERSION};

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

/// Nonzero exit codes, one per error category, so callers can branch on
/// failures without parsing messages.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    ConfigSchema(String),
    #[error("{0}")]
    MissingArtifact(String),
    #[error("{0}")]
    BadCheckpoint(String),
    #[error("{0}")]
    IncompatiblePlan(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::ConfigSchema(_) => "config-schema",
            CliError::MissingArtifact(_) => "missing-artifact",
            CliError::BadCheckpoint(_) => "bad-checkpoint",
            CliError::IncompatiblePlan(_) => "incompatible-plan",
            CliError::Data(_) => "data",
            CliError::Run(_) => "run",
            CliError::Verification(_) => "verification",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ConfigSchema(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::BadCheckpoint(_) => 4,
            CliError::IncompatiblePlan(_) => 5,
            CliError::Data(_) => 6,
            CliError::Run(_) => 7,
            CliError::Verification(_) => 8,
            CliError::Io(_) => 9,
        }
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        use crate::model::ModelError::*;
        match e {
            InvalidConfig(m) => CliError::ConfigSchema(m),
            IncompatiblePlan(m) => CliError::IncompatiblePlan(m),
            BadCheckpoint(m) => CliError::BadCheckpoint(m),
            SequenceTooLong { .. } | TokenOutOfRange { .. } => CliError::Data(e.to_string()),
            Numerics(n) => CliError::Run(n.to_string()),
            Io(e) => CliError::Io(e),
        }
    }
}

impl From<crate::learning::TrainError> for CliError {
    fn from(e: crate::learning::TrainError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<crate::theory::TheoryError> for CliError {
    fn from(e: crate::theory::TheoryError) -> Self {
        use crate::theory::TheoryError::*;
        match e {
            InvalidConfig(m) => CliError::ConfigSchema(m),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<crate::bench::BenchError> for CliError {
    fn from(e: crate::bench::BenchError) -> Self {
        use crate::bench::BenchError::*;
        match e {
            InvalidConfig(m) => CliError::ConfigSchema(m),
            Combinatorics { .. } => CliError::ConfigSchema(e.to_string()),
            Io(e) => CliError::Io(e),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "widthlab",
    about = "Desk-scale laboratory for width-upscaled decoder transformers",
    version
)]
pub struct Cli {
    /// TOML config file; omitted fields fall back to embedded defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file and feeds every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "runs/default")]
    pub out: PathBuf,
    /// Dotted-key config override, repeatable: --set train.steps=500
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate training and held-out corpora.
    Gen,
    /// Train a fresh base model on the first domain.
    Pretrain,
    /// Widen a base checkpoint into an upscaled one.
    Upscale,
    /// Continually train an upscaled checkpoint on the second domain.
    Train,
    /// Score a checkpoint on the held-out corpora.
    Eval,
    /// Run the preservation, shift-bound, sweep, and convergence checks.
    VerifyTheory,
    /// Re-run one stage across a list of parameter values.
    Sweep,
    /// Print the fully resolved config as TOML and exit.
    PrintConfig,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Pretrain => "pretrain",
            Command::Upscale => "upscale",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::VerifyTheory => "verify-theory",
            Command::Sweep => "sweep",
            Command::PrintConfig => "print-config",
        }
    }
}

/// Runs one parsed invocation, printing progress to stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), cli.seed, &cli.sets)?;
    if matches!(cli.command, Command::PrintConfig) {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Gen => commands::cmd_gen(&cfg, &cli.out),
        Command::Pretrain => commands::cmd_pretrain(&cfg, &cli.out),
        Command::Upscale => commands::cmd_upscale(&cfg, &cli.out),
        Command::Train => commands::cmd_train(&cfg, &cli.out),
        Command::Eval => commands::cmd_eval(&cfg, &cli.out),
        Command::VerifyTheory => commands::cmd_verify_theory(&cfg, &cli.out),
        Command::Sweep => commands::cmd_sweep(&cfg, &cli.out),
        Command::PrintConfig => unreachable!("handled before artifact setup"),
    }
}
