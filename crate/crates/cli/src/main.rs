//! `ratetip`: branches, series, pullback solutions, tipping detection and
//! figure data for scalar ramped systems.

mod commands;
mod config;
mod error;
mod figures;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigFile, Range};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ratetip", version, about = "Rate-induced tipping analysis for scalar ramped ODEs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalArgs {
    /// Flat key=value file; flags take precedence over its entries.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in model name (quad_arctan, quad_tanh).
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub zeta: Option<f64>,
    /// Polynomial model file; overrides --model.
    #[arg(long, global = true, value_name = "FILE")]
    pub model_file: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Integration / probe tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quasi-static stable and unstable branches.
    Branches,
    /// Series coefficients, validity radius and error fit.
    Series {
        #[arg(long)]
        order: Option<usize>,
        /// Skip the pullback-based error fit.
        #[arg(long)]
        no_fit: bool,
    },
    /// Pullback attractor and repeller estimates.
    Pullback {
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, value_name = "LO:HI", allow_hyphen_values = true)]
        window: Option<Range>,
        /// attractor, repeller or both.
        #[arg(long)]
        side: Option<String>,
    },
    /// Tipping detection through the probe discriminants.
    Tip {
        #[arg(long)]
        order: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        epsilon: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, value_name = "LO:HI")]
        r_range: Option<Range>,
        /// Also tabulate r* − δ(n, τ) on τ = 0, 1, .., τ.
        #[arg(long)]
        delta: bool,
        /// Also locate the stability-indicator crossing.
        #[arg(long)]
        indicator: bool,
    },
    /// CSV data behind figure 1..5.
    Figure { which: String },
    /// Model sanity checks (ramp, jets, branches).
    Validate {
        /// Random jet checks.
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.global.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ctx = commands::Context::resolve(&cli.global, cfg)?;
    match cli.command {
        Command::Branches => commands::branches(&ctx),
        Command::Series { order, no_fit } => commands::series(&ctx, order, no_fit),
        Command::Pullback { r, window, side } => commands::pullback(&ctx, r, window, side),
        Command::Tip { order, epsilon, tau, r_range, delta, indicator } => {
            commands::tip(&ctx, commands::TipArgs { order, epsilon, tau, r_range, delta, indicator })
        }
        Command::Figure { which } => figures::figure(&ctx, &which),
        Command::Validate { samples } => commands::validate(&ctx, samples),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
