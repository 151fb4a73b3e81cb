//! Command-line front end: configuration parsing, data ingestion and result
//! export around the `gp3` engine.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use gp3::Gp3Error;

pub mod commands;
pub mod config;
pub mod io;

/// Exit code for usage and configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for numerical failures during an analysis.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<Gp3Error> for CliError {
    fn from(e: Gp3Error) -> Self {
        match e {
            Gp3Error::NotPositiveDefinite { .. }
            | Gp3Error::BoundInconsistency { .. }
            | Gp3Error::NonFinite { .. }
            | Gp3Error::StepUnderflow { .. }
            | Gp3Error::NonFiniteState { .. }
            | Gp3Error::Optimizer(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gp3", version, about = "Certified analysis of Gaussian process posterior means")]
pub struct Cli {
    /// Worker threads (0 = all cores); overrides GP3_WORKERS and the config.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Global Lipschitz constants of posterior means by uniform refinement.
    Lipschitz {
        #[arg(long)]
        config: PathBuf,
        /// Restrict the run to one kernel family (se, m32, m52).
        #[arg(long)]
        kernel: Option<String>,
        /// Largest number of cells per kernel.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Adaptive verification of `g(f(x)) - μ(x)` against target bounds.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Region-of-attraction certification for the single machine infinite bus.
    Roa {
        #[arg(long)]
        config: PathBuf,
        /// Do not run the trajectory-simulation baseline.
        #[arg(long)]
        skip_baseline: bool,
        /// Override the machine inertia.
        #[arg(long)]
        m1: Option<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print a trajectory as CSV.
    Simulate {
        /// smib, decay, oscillator or zero.
        #[arg(long)]
        system: String,
        /// Comma-separated initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long)]
        m1: Option<f64>,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("GP3_LOG")
        .try_init();
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gp3: {e}");
            e.exit_code()
        }
    }
}
