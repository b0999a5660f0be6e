//! Experiment orchestration: one subcommand per pipeline, each reading a flat
//! `key = value` config and writing CSV rows plus a JSON summary.
//!
//! Exit codes: 0 success, 1 runtime error, 2 invalid configuration,
//! 3 experiment ran but was flagged as failed.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;

use config::{Preset, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(landscape_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<landscape_core::Error> for CliError {
    fn from(e: landscape_core::Error) -> Self {
        use landscape_core::Error as E;
        match e {
            E::InvalidArgument(m) | E::Dimension(m) | E::InsufficientSamples(m) => CliError::Validation(m),
            E::HessianCap { .. } | E::Truncated { .. } | E::InvalidLabel { .. } | E::Format(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            _ => 1,
        }
    }
}

/// A completed experiment, possibly with reasons it should count as failed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    pub flags: Vec<String>,
}

impl Outcome {
    pub fn from_flags(flags: Vec<String>) -> Self {
        Self { flags }
    }

    pub fn exit_code(&self) -> i32 {
        if self.flags.is_empty() { 0 } else { 3 }
    }
}

#[derive(Debug, Parser)]
#[command(name = "landscape", version, about = "Loss-landscape entropy experiments")]
pub struct Cli {
    /// Flat `key = value` file overriding the preset defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare minibatch-noise covariance formulas with enumeration and sampling.
    NoiseVerify,
    /// Entropy histograms for SGD, Langevin and gradient descent.
    TrainCompare,
    /// Entropy against test error over an SGD ensemble.
    EntropyVsError,
    /// Balanced and imbalanced two-layer linear student ensembles.
    LinearSuite,
    /// Hessian spectrum and free energy of a saved checkpoint.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the documented keys of a subcommand with their preset defaults.
    Keys {
        #[arg(value_parser = ["noise-verify", "train-compare", "entropy-vs-error", "linear-suite", "spectrum"])]
        subcommand: String,
    },
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

pub(crate) fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_file(dir, name, &text)
}

fn schema_for(name: &str) -> (&'static str, Vec<config::KeySpec>) {
    match name {
        "noise-verify" => ("noise-verify", commands::noise::schema()),
        "train-compare" => ("train-compare", commands::classify::compare_schema()),
        "entropy-vs-error" => ("entropy-vs-error", commands::classify::scatter_schema()),
        "linear-suite" => ("linear-suite", commands::linear::schema()),
        _ => ("spectrum", commands::spectrum::schema()),
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    let name = match &cli.command {
        Command::NoiseVerify => "noise-verify",
        Command::TrainCompare => "train-compare",
        Command::EntropyVsError => "entropy-vs-error",
        Command::LinearSuite => "linear-suite",
        Command::Spectrum { .. } => "spectrum",
        Command::Keys { subcommand } => {
            let (_, schema) = schema_for(subcommand);
            for (key, desk, paper, doc) in schema {
                println!("{key:<24} desk={desk:<18} paper={paper:<18} {doc}");
            }
            return Ok(Outcome::default());
        }
    };
    let (command, schema) = schema_for(name);
    let mut cfg = Settings::load(command, &schema, cli.preset, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed);
    }
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::NoiseVerify => commands::noise::run(&cfg, out),
        Command::TrainCompare => commands::classify::train_compare(&cfg, out),
        Command::EntropyVsError => commands::classify::entropy_vs_error(&cfg, out),
        Command::LinearSuite => commands::linear::run(&cfg, out),
        Command::Spectrum { checkpoint } => commands::spectrum::run(&cfg, checkpoint, out),
        Command::Keys { .. } => unreachable!(),
    }
}

/// Runs the parsed command on a pool of `cli.jobs` threads.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Validation(format!("--jobs {}: {e}", cli.jobs)))?;
    pool.install(|| dispatch(cli))
}

/// Parses `args` (program name first), runs, reports to stderr and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            for flag in &outcome.flags {
                eprintln!("flagged: {flag}");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
