//! Command-line front end for the splitrec simulator.
//!
//! Settings resolve as flag, then `--config` file, then default. The output
//! directory additionally falls back to `SPLITREC_OUT_DIR` before its default.
//! Each command writes `<command>.manifest.json` first; passing that file
//! back through `--config` replays the run.

pub mod commands;
pub mod config;
pub mod input;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use config::{CountList, RealList, RunManifest};
pub use input::{load_interactions, parse_interactions, InputError, LoadedInteractions};

pub const OUT_DIR_ENV: &str = "SPLITREC_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "splitrec-out";

#[derive(Debug, Parser)]
#[command(name = "splitrec", version, about = "Share-splitting recommendation protocol simulator")]
pub struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [env: SPLITREC_OUT_DIR, default: splitrec-out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// key=value settings file, or a run manifest (.json) to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split one interaction vector and show the shares and reconstruction.
    SplitDemo(SplitDemoArgs),
    /// Upload, recommend and download on a dataset.
    Pipeline(PipelineArgs),
    /// Jaccard similarity of partial share sums against the share count.
    Attack(AttackArgs),
    /// Partial-sum similarity against the padding ratio.
    Ratio(RatioArgs),
    /// Virtual-ID repetition rate against ID length.
    IdCollision(IdCollisionArgs),
    /// Communication cost against the decay factor.
    AlphaSweep(AlphaSweepArgs),
    /// Communication cost against the number of clients.
    Scaling(ScalingArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SplitDemo(_) => "split-demo",
            Command::Pipeline(_) => "pipeline",
            Command::Attack(_) => "attack",
            Command::Ratio(_) => "ratio",
            Command::IdCollision(_) => "id-collision",
            Command::AlphaSweep(_) => "alpha-sweep",
            Command::Scaling(_) => "scaling",
        }
    }
}

#[derive(Debug, Args)]
pub struct SplitDemoArgs {
    /// Item indices, e.g. 3,7,12.
    #[arg(long)]
    pub items: Option<CountList>,
    #[arg(long)]
    pub n_item: Option<u32>,
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Padding ratio.
    #[arg(long)]
    pub c: Option<usize>,
    /// Number of shares.
    #[arg(long)]
    pub shares: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Generate this many synthetic users (default 100).
    #[arg(long, conflicts_with = "input")]
    pub synthetic: Option<usize>,
    /// Interaction file, one user per line.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Item universe size (synthetic default 2000, file default max index).
    #[arg(long)]
    pub n_item: Option<u32>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub shares: Option<usize>,
    #[arg(long)]
    pub id_len: Option<usize>,
    /// Recommendations per user.
    #[arg(long)]
    pub k: Option<usize>,
    /// Round budget per phase (default 10 x users).
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Also write every message to pipeline_messages.csv.
    #[arg(long)]
    pub log: bool,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Share counts, e.g. 50,100,200.
    #[arg(long)]
    pub shares: Option<CountList>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub n_item: Option<u32>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RatioArgs {
    /// Padding ratios, e.g. 2..10:2.
    #[arg(long)]
    pub c: Option<CountList>,
    #[arg(long)]
    pub shares: Option<usize>,
    #[arg(long)]
    pub n_item: Option<u32>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IdCollisionArgs {
    /// ID lengths, e.g. 1..8.
    #[arg(long)]
    pub lengths: Option<CountList>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

/// Protocol parameters shared by the cost experiments.
#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub n_item: Option<u32>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub shares: Option<usize>,
    #[arg(long)]
    pub id_len: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AlphaSweepArgs {
    /// Decay factors, e.g. 0.5,0.7,0.9.
    #[arg(long)]
    pub alphas: Option<RealList>,
    #[arg(long)]
    pub users: Option<usize>,
    #[command(flatten)]
    pub cost: CostArgs,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    /// Client counts, e.g. 100..1000:100.
    #[arg(long)]
    pub users: Option<CountList>,
    #[arg(long)]
    pub alphas: Option<RealList>,
    #[command(flatten)]
    pub cost: CostArgs,
}

/// Whether every check of the run held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    Failed,
}

/// Executes a parsed command line, printing progress to `out`.
pub fn run<W: Write>(cli: Cli, out: &mut W) -> Result<Outcome> {
    commands::dispatch(cli, out)
}
