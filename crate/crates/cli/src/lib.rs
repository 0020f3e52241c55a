//! `tasktree` command-line driver.
//!
//! Exit codes: 0 success, 1 validation failure, 2 numeric failure, 64 usage
//! error (unknown flag, malformed config, missing input file).

pub mod commands;
pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<tasktree_core::Error> for CliError {
    fn from(e: tasktree_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tasktree", version, about = "Task-tree graph pretraining toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain an encoder on one or more dataset bundles.
    Pretrain(Flags),
    /// Instruction-tune a checkpoint toward a dataset's class vectors.
    Specialize(Flags),
    /// Evaluate an encoder with the finetune, incontext or zeroshot protocol.
    Eval(Flags),
    /// Run a randomized verification suite.
    Verify(Flags),
    /// Time the task-tree pipeline against ego-subgraph extraction.
    Bench(Flags),
    /// Generate the two-domain synthetic benchmark.
    Synth(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// `key = value` config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset bundle directory (comma-separated for pretraining).
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl Flags {
    fn into_config(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let path = |p: PathBuf| p.display().to_string();
        let overrides: [(&str, Option<String>); 15] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("out", self.out.map(path)),
            ("data", self.data),
            ("checkpoint", self.checkpoint.map(path)),
            ("protocol", self.protocol),
            ("ways", self.ways.map(|v| v.to_string())),
            ("shots", self.shots.map(|v| v.to_string())),
            ("tasks", self.tasks.map(|v| v.to_string())),
            ("trials", self.trials.map(|v| v.to_string())),
            ("suite", self.suite),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("layers", self.layers.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Reports go to `out`, diagnostics to stderr.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Pretrain(f) => f.into_config().and_then(|c| commands::pretrain(&c, out)),
        Command::Specialize(f) => f.into_config().and_then(|c| commands::specialize(&c, out)),
        Command::Eval(f) => f.into_config().and_then(|c| commands::eval(&c, out)),
        Command::Verify(f) => f.into_config().and_then(|c| commands::verify(&c, out)),
        Command::Bench(f) => f.into_config().and_then(|c| commands::bench(&c, out)),
        Command::Synth(f) => f.into_config().and_then(|c| commands::synth(&c, out)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("tasktree: {e}");
            e.exit_code()
        }
    }
}
