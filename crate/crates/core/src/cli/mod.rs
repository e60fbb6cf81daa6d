//! Command-line front end.
//!
//! Exit codes: 0 success, 1 solver or I/O failure, 2 configuration error,
//! 3 failed invariant check.

mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use config::{parse_config, parse_config_str, ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "po4dop", version, about = "PO4-DOP phosphorus model runs and invariant checks")]
pub struct Cli {
    /// Run configuration (flat key=value); defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time-step the coupled model; writes snapshots and diagnostics.csv.
    Forward,
    /// Fixed-point iteration over whole trajectories; writes picard.csv and energy.csv.
    Picard {
        /// Record per-iteration wall-clock time (otherwise written as 0).
        #[arg(long)]
        timing: bool,
    },
    /// Parameter sensitivity trajectory; writes tangent_<param>_*.csv.
    Tangent {
        #[arg(long)]
        param: String,
        /// Compare against central differences; writes fd_check_<param>.csv.
        #[arg(long)]
        fd_check: bool,
    },
    /// Gauss-Newton fit of the active parameters to observations; writes fit.csv.
    Identify {
        #[arg(long)]
        obs: PathBuf,
        /// Generate OBS from the configured parameters first, then fit from a perturbed start.
        #[arg(long)]
        synthesize: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Relative noise level for --synthesize.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Cosine-basis solve on a flat box; writes galerkin.csv.
    Galerkin {
        #[arg(long)]
        modes: usize,
        /// Also compare with the finite-volume fixed point; writes galerkin_compare.csv.
        #[arg(long)]
        compare: bool,
    },
    /// Invariant suites; writes check.csv and constants.csv.
    Check {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug)]
pub enum Failure {
    Solver(String),
    Config(String),
    Invariant(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Solver(_) => 1,
            Failure::Config(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Solver(m) | Failure::Config(m) | Failure::Invariant(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(format!("i/o: {e}"))
    }
}

impl From<crate::solver::SolverError> for Failure {
    fn from(e: crate::solver::SolverError) -> Self {
        use crate::solver::SolverError;
        match e {
            SolverError::Config(_) | SolverError::NotFlat(_) => Failure::Config(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

pub fn load(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::defaults(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Runs one command; progress goes to stdout and errors are returned.
pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load(cli)?;
    commands::dispatch(&cli.command, &cfg)
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
