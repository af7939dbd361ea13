//! Command-line front end: `krdistill <command> [flags]`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Command, RunSpec, SweepParam, SweepSpec};

use crate::error::{KrdError, Result};

#[derive(Debug, Parser)]
#[command(name = "krdistill", version, about = "Rectified knowledge distillation on long-tailed data")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write a synthetic long-tailed train/eval split
    GenData,
    /// Train a teacher with cross-entropy
    Pretrain,
    /// Distill a student (variant from --variant, default krd)
    Distill,
    /// Evaluate a stored model
    Evaluate,
    /// Run all five variants for every seed and tabulate
    Ablate,
    /// Vary one hyperparameter of the krd variant
    Sweep,
    /// Rebuild report tables from stored run directories
    Report,
}

#[derive(Debug, Args)]
struct Flags {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory with train.csv and eval.csv, or a single CSV
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    teacher: Option<PathBuf>,
    /// Model for `evaluate` (defaults to --teacher)
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// One or more seeds, comma-separated
    #[arg(long, global = true, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    classes: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Student and teacher epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Sweep parameter: beta, alpha, tau or projector_layers
    #[arg(long, global = true)]
    param: Option<String>,
    /// Sweep values, comma-separated
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    values: Option<Vec<f64>>,
    /// Add per-class accuracy columns to reports
    #[arg(long, global = true)]
    per_class: bool,
}

impl Cmd {
    fn command(&self) -> Command {
        match self {
            Cmd::GenData => Command::GenData,
            Cmd::Pretrain => Command::Pretrain,
            Cmd::Distill => Command::Distill,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Ablate => Command::Ablate,
            Cmd::Sweep => Command::Sweep,
            Cmd::Report => Command::Report,
        }
    }
}

fn apply_flags(spec: &mut RunSpec, f: Flags) -> Result<()> {
    let t = &mut spec.train;
    let b = &mut spec.benchmark;
    if let Some(v) = f.data {
        spec.data = Some(v);
    }
    if let Some(v) = f.teacher {
        spec.teacher = Some(v);
    }
    if let Some(v) = f.model {
        spec.model = Some(v);
    }
    if let Some(v) = f.out {
        spec.out = v;
    }
    if let Some(v) = f.seed {
        spec.seeds = v;
    }
    if let Some(v) = f.beta {
        t.loss.beta = v;
    }
    if let Some(v) = f.alpha {
        t.loss.alpha = v;
    }
    if let Some(v) = f.tau {
        t.loss.tau = v;
    }
    if let Some(v) = f.rho {
        b.rho = v;
    }
    if let Some(v) = f.classes {
        b.classes = v;
    }
    if let Some(v) = f.dim {
        b.dim = v;
    }
    if let Some(v) = f.epochs {
        t.epochs = v;
        t.teacher_epochs = v;
    }
    if let Some(v) = f.variant {
        t.variant = v.parse()?;
    }
    if let Some(v) = f.parallel {
        spec.parallel = v;
    }
    if let Some(v) = f.param {
        spec.sweep_param = Some(v.parse()?);
    }
    if let Some(v) = f.values {
        spec.sweep_values = v;
    }
    spec.per_class |= f.per_class;
    Ok(())
}

/// Parses arguments and merges config file, environment and flags.
pub fn build_spec<I, T>(args: I, env: impl Fn(&str) -> Option<String>) -> std::result::Result<RunSpec, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Clap)?;
    let command = cli.command.command();
    let mut spec = match &cli.flags.config {
        Some(p) => config::parse_config(p, command).map_err(CliError::Run)?,
        None => RunSpec::new(command),
    };
    config::apply_env(&mut spec, env).map_err(CliError::Run)?;
    apply_flags(&mut spec, cli.flags).map_err(CliError::Run)?;
    Ok(spec)
}

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Run(KrdError),
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = build_spec(args, |k| std::env::var(k).ok())
        .and_then(|spec| commands::run(&spec).map_err(CliError::Run));
    match result {
        Ok(()) => 0,
        Err(CliError::Clap(e)) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
        Err(CliError::Run(e)) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("krdistill: error: {line}");
            e.exit_code()
        }
    }
}
