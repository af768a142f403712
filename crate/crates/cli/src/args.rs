use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "fdp",
    version,
    about = "f-DP accounting for shuffled randomized response and DP-GD with random initialization"
)]
pub struct Cli {
    /// Worker threads; defaults to FDP_THREADS, then to the number of cores.
    #[arg(long, global = true, env = "FDP_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,

    /// Write the artifact here instead of standard output.
    #[arg(long, short, global = true)]
    #[serde(skip)]
    pub output: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Shuffled ε₀-randomized response.
    #[command(subcommand)]
    Shuffle(ShuffleCommand),
    /// One noisy gradient step from a Gaussian initialization.
    #[command(subcommand)]
    Dpgd(DpgdCommand),
    /// Exact enumeration of the shuffle dominating pair.
    Oracle(OracleArgs),
    /// Recompute a reference result and compare.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct ShuffleBase {
    /// Number of users.
    #[arg(long)]
    pub n: u64,
    /// Local randomized-response budget.
    #[arg(long)]
    pub eps0: f64,
    /// Total count mass the window may drop.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleCommand {
    /// Knots of the amplified trade-off curve.
    Curve {
        #[command(flatten)]
        base: ShuffleBase,
        /// Use K log-spaced thresholds (a lower bound) instead of every knot.
        #[arg(long)]
        grid: Option<usize>,
        /// Emit the curve before symmetrization.
        #[arg(long)]
        unsymmetrized: bool,
    },
    /// δ at a given ε.
    Delta {
        #[command(flatten)]
        base: ShuffleBase,
        #[arg(long)]
        eps: f64,
    },
    /// Smallest ε reaching a given δ.
    Epsilon {
        #[command(flatten)]
        base: ShuffleBase,
        #[arg(long)]
        delta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Clip,
    Noclip,
    Logistic,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct DpgdArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Clip)]
    pub model: ModelKind,
    /// Data constant of the linear example.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Clipping norm.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Bound on |xy| for the logistic model.
    #[arg(long, default_value_t = 1.0)]
    pub bound: f64,
    /// Number of log-thresholds.
    #[arg(long, default_value_t = fdp_core::dpgd::DEFAULT_T_POINTS)]
    pub points: usize,
    /// Quadrature tolerance per expectation.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DpgdCommand {
    /// Threshold samples `t,alpha,beta,err`.
    Curve {
        #[command(flatten)]
        args: DpgdArgs,
        /// Emit the conservative piecewise-linear envelope instead of samples.
        #[arg(long)]
        envelope: bool,
    },
    /// Margin over the c-GDP baseline on an α grid.
    Compare {
        #[command(flatten)]
        args: DpgdArgs,
        /// Number of interior α points.
        #[arg(long, default_value_t = 9)]
        alphas: usize,
    },
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct OracleArgs {
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub eps0: f64,
    /// Dump the exact trade-off knots.
    #[arg(long)]
    pub exact_tradeoff: bool,
    /// Exact δ at this ε.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Exact ε at this δ.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Estimate an ε lower bound by sampling instead (needs --delta).
    #[arg(long)]
    pub monte_carlo: bool,
    #[arg(long, default_value_t = 10_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the base pair instead of the shuffled mixture.
    #[arg(long)]
    pub base: bool,
    /// Add the wall-clock time to JSON output (makes it run-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    T1,
    T2,
    Fig1,
    Fig2,
    Fig3,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub target: Target,
}
