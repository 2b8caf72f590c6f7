//! `ipsdual`: batch driver for simulation, verification and table reproduction.
//!
//! Exit codes: 0 success, 1 verification or numerical failure, 2 usage or config error.
//!
//! Config precedence: built-in defaults, then the `--config` TOML document,
//! then `--set field=value` overrides in command-line order.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ipsdual::Error;

#[derive(Parser, Debug)]
#[command(name = "ipsdual", version, about = "Boundary-driven interacting particle systems and their duals")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Model description (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set L=5`; repeatable and applied in order.
    #[arg(long = "set", value_name = "FIELD=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Root seed; every replica stream is derived from it.
    #[arg(long, default_value_t = 1, global = true)]
    pub seed: u64,
    /// Worker threads (0 uses all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0, global = true)]
    pub threads: usize,
    #[arg(long, default_value = "out", global = true)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    pub format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample the stationary state by kinetic Monte Carlo or SDE integration.
    Simulate(commands::SimulateArgs),
    /// Run a named invariant suite over its built-in parameter grid.
    Verify {
        #[arg(value_enum)]
        suite: SuiteName,
    },
    /// Absorption probabilities of the dual walkers.
    Absorption(commands::AbsorptionArgs),
    /// Exact stationary distribution of the truncated generator.
    Stationary(commands::StationaryArgs),
    /// Emit the data tables behind the standard results.
    Reproduce(commands::ReproduceArgs),
    /// Macroscopic fluctuation theory quantities.
    Mft(commands::MftArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteName {
    Duality,
    Equilibrium,
    Absorption,
    Appendix,
    Thermalized,
    Scaling,
}

/// Failure classes mapped onto exit codes.
pub enum Failure {
    Verification(String),
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) | Error::Unsupported { .. } | Error::Budget { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
