//! `rots` — experiment driver for the robust time-series trainer.
//!
//! Exit codes: 0 success, 1 validation/usage, 2 numeric failure or
//! divergence, 3 I/O.

mod commands;
mod config;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rots_core::CoreError;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rots", version, about = "Robust time-series training experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model with the configured method.
    Train(TrainArgs),
    /// Robust-accuracy sweep of a trained checkpoint.
    Eval(EvalArgs),
    /// Alignment distances between two series files.
    Distance(DistanceArgs),
    /// Synthetic compositional benchmark (solver vs. grid oracle).
    BenchPl(BenchArgs),
    /// Finite-difference verification of the analytic gradients.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 is the determinism reference mode.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: TrainArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args)]
pub struct DistanceArgs {
    /// First series file (one channel per line).
    #[arg(long)]
    pub a: PathBuf,
    /// Second series file.
    #[arg(long)]
    pub b: PathBuf,
    /// Kernel bandwidth nu.
    #[arg(long, default_value_t = 1.0)]
    pub nu: f64,
    /// Step norm: 1, 2, or inf.
    #[arg(long, default_value = "2")]
    pub p: String,
    /// Sakoe-Chiba band width (cells with |i-j| < band).
    #[arg(long)]
    pub band: Option<f64>,
    /// Also report the DTW-vs-GAK gap and its nu*ln|A| bound (enumerates
    /// alignments; short series only).
    #[arg(long)]
    pub prop1: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    /// JSON bench config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 is the determinism reference mode.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct GradCheckArgs {
    /// Gradient family to check; all four when omitted.
    #[arg(long, value_enum)]
    pub scope: Option<Scope>,
    /// Random instances per suite.
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scope {
    /// Alignment path-cost gradients.
    Dpi,
    /// Exact log-kernel gradients.
    Gak,
    /// Network weight/input gradients and the STN combined loss.
    Net,
    /// RO-TS dual gradients and the bench h-gradients.
    Rots,
}

impl Scope {
    fn name(self) -> &'static str {
        match self {
            Scope::Dpi => "dpi",
            Scope::Gak => "gak",
            Scope::Net => "net",
            Scope::Rots => "rots",
        }
    }
}

fn exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Parse { .. }
        | CoreError::Shape(_)
        | CoreError::Arg(_)
        | CoreError::Size(_)
        | CoreError::Band(_)
        | CoreError::Unsupported(_)
        | CoreError::Arch(_) => 1,
        CoreError::Numeric(_) | CoreError::State(_) | CoreError::Diverged { .. } => 2,
        CoreError::Io { .. } => 3,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match cli.cmd {
        Cmd::Train(args) => commands::cmd_train(args),
        Cmd::Eval(args) => commands::cmd_eval(args),
        Cmd::Distance(args) => commands::cmd_distance(args),
        Cmd::BenchPl(args) => commands::cmd_bench_pl(args),
        Cmd::GradCheck(args) => commands::cmd_grad_check(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
