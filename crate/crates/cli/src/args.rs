//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "l3o", version, about = "Leave-three-out inference for IV with many instruments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Point estimates, leverage summary and first-stage diagnostics.
    Estimate(Options),
    /// Test H0: β = β0 with the selected procedures.
    Test(Options),
    /// Confidence sets by test inversion.
    Cs(Options),
    /// Leave-out feasibility scan and first-stage strength.
    Diagnose(Options),
    /// Monte Carlo rejection rates for a design file or the benchmark preset.
    Simulate(Options),
}

impl Command {
    pub fn options(&self) -> &Options {
        match self {
            Command::Estimate(o) | Command::Test(o) | Command::Cs(o) | Command::Diagnose(o) | Command::Simulate(o) => o,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Test(_) => "test",
            Command::Cs(_) => "cs",
            Command::Diagnose(_) => "diagnose",
            Command::Simulate(_) => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Jive,
    Ujive,
    Sive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Data file (CSV) for estimate/test/cs/diagnose.
    pub input: Option<PathBuf>,
    /// `key=value` file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Drop singular leave-three-out terms instead of failing.
    #[arg(long)]
    pub conservative: bool,
    /// Invert the L3O test on a grid instead of in closed form.
    #[arg(long)]
    pub grid: bool,
    /// Comma-separated procedure names (e.g. L3O,MS,LMorc).
    #[arg(long)]
    pub procedures: Option<String>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for simulation (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Run the nine benchmark null designs (binary judges, K=400, c=5).
    #[arg(long)]
    pub table1: bool,
}
