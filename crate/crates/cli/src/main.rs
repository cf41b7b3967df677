//! `capsolve`: solve, tabulate, simulate and verify the capped-consumption
//! investment problem from a JSON parameter file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Solver for optimal consumption and investment under the cap `c <= kx + l`.
#[derive(Debug, Parser)]
#[command(name = "capsolve", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Locate the free boundary and write the solution as JSON.
    Solve(SolveArgs),
    /// Tabulate V, its derivatives and the optimal policy.
    Table(TableArgs),
    /// Monte Carlo estimate of expected discounted utility.
    Simulate(SimulateArgs),
    /// Run the invariant suite; exit 1 if any check fails.
    Verify(VerifyArgs),
    /// Finite-difference policy iteration (cross-check oracle).
    Fd(FdArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with keys r, mu, sigma, beta, p, k, ell.
    pub config: PathBuf,
    /// Write the result here (a `<out>.run.json` record is written alongside).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Bisection width relative to the bracket width.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub xmin: f64,
    #[arg(long)]
    pub xmax: f64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub x0: f64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
    /// Defaults to ln(1e8)/beta, so the discount factor at T is 1e-8.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// optimal, optimal-linear (pi = merton_fraction x), merton, homogeneous,
    /// zero or scaled:<factor>.
    #[arg(long, default_value = "optimal")]
    pub policy: String,
    /// Also simulate c*0.8, c*1.2 and pi*0.5 perturbations of the optimal
    /// policy and report paired differences.
    #[arg(long)]
    pub compare: bool,
    /// Write per-path utility quantiles to this CSV file.
    #[arg(long)]
    pub quantiles: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Finite-difference nodes for the cross-check.
    #[arg(long, default_value_t = 4000)]
    pub fd_nodes: usize,
}

#[derive(Debug, Args)]
pub struct FdArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 4000)]
    pub nodes: usize,
    /// Right end of the grid; defaults to 1000 l/(kappa-k).
    #[arg(long)]
    pub x_max: Option<f64>,
    /// Write nodal values as CSV to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const VERIFY: u8 = 1;
    pub const INVALID: u8 = 2;
    pub const UNSUPPORTED: u8 = 3;
    pub const NUMERICAL: u8 = 4;

    pub fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: Self::INVALID,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: Self::NUMERICAL,
            message: message.into(),
        }
    }
}

impl From<capcon::Error> for CliError {
    fn from(e: capcon::Error) -> Self {
        use capcon::Error as E;
        let code = match &e {
            E::InvalidParameter(_)
            | E::IllPosed { .. }
            | E::RegimeMismatch { .. }
            | E::Domain { .. }
            | E::OutsideBracket { .. } => CliError::INVALID,
            E::Unsupported { .. } => CliError::UNSUPPORTED,
            _ => CliError::NUMERICAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("CAPSOLVE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::invalid(format!(
            "CAPSOLVE_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::invalid(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Table(a) => commands::table(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Verify(a) => commands::verify(a),
        Command::Fd(a) => commands::fd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("capsolve: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
