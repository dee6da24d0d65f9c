//! Operator surface: dataset generation, the training phases, inference,
//! evaluation, transfer fine-tuning, ablation grids, and report/plot
//! emission.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.
//! Every run creates a directory under `$TILEREFINE_RUNS_DIR` (default
//! `./runs`) named by timestamp and seed, and writes the resolved config
//! snapshot next to its outputs.

mod commands;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tilerefine::error::Error;

#[derive(Parser)]
#[command(name = "tilerefine", version, about = "Tile-based depth refinement pipeline")]
pub(crate) struct Cli {
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    pub(crate) config: Option<PathBuf>,
    /// Override the schedule seed.
    #[arg(long, global = true)]
    pub(crate) seed: Option<u64>,
    /// Dotted-key config overrides, e.g. `--set schedule.lr=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub(crate) overrides: Vec<String>,
    /// Overwrite non-empty output directories.
    #[arg(long, global = true)]
    pub(crate) force: bool,
    #[command(subcommand)]
    pub(crate) command: Command,
}

#[derive(Subcommand)]
pub(crate) enum Command {
    /// Generate the procedural dataset tree described by the config.
    GenData,
    /// Noisy pretraining of the refiner branch.
    Pretrain,
    /// Train the coarse branch alone.
    TrainCoarse,
    /// End-to-end training (optionally initialized from checkpoints).
    Train,
    /// Fused full-image inference over a dataset split.
    Infer,
    /// Evaluate predicted depth maps against ground truth.
    Eval {
        /// Directory of predicted `.f32` maps.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth `.f32` maps.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Pseudo-label transfer fine-tuning on the real-emulated domain.
    Transfer,
    /// Run an ablation grid and emit one report row per entry.
    Ablate {
        /// Grid JSON (array of entries); the built-in grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Render plots (depth/error maps, ablation bars) from a report.
    Report {
        /// Report JSON produced by `eval` or `ablate`.
        #[arg(long)]
        report: PathBuf,
        /// Optional prediction directory for depth/error maps.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Optional ground-truth directory for error maps.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with success; usage errors
            // go to stderr with exit code 1
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Shape(_) | Error::Json(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
