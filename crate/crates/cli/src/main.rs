use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod overrides;

use overrides::ConfigOverrides;

#[derive(Parser, Debug)]
#[command(name = "brl", version, about = "Balanced representation learning for long-tailed skeleton action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a balanced synthetic skeleton dataset.
    Synth(SynthArgs),
    /// Cut a balanced training manifest down to an exponential long tail.
    MakeLt(MakeLtArgs),
    /// Convert joint samples into another modality stream.
    Derive(DeriveArgs),
    /// Train one stream.
    Train(TrainArgs),
    /// Score a manifest with a checkpoint.
    Eval(EvalArgs),
    /// Fuse per-stream score matrices.
    Ensemble(EnsembleArgs),
    /// Turn a score matrix into JSON / CSV metrics.
    Report(ReportArgs),
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// TOML file with generator settings; flags below take precedence.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Joint count (5, 15 or 25).
    #[arg(long)]
    pub joints: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub persons: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub val_per_class: Option<usize>,
    /// Coordinate noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Per-sample spread of amplitude, phase, tempo, size and heading.
    #[arg(long)]
    pub variation: Option<f64>,
    /// How far class motions depart from the shared template.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample precision on disk (f32 or f64).
    #[arg(long)]
    pub dtype: Option<String>,
}

#[derive(clap::Args, Debug)]
pub struct MakeLtArgs {
    /// Balanced training manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// n_max / n_min of the resulting profile.
    #[arg(long, default_value_t = 100.0)]
    pub ratio: f64,
    /// Samples kept for the head class.
    #[arg(long, default_value_t = 600)]
    pub max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Head-to-tail class order: label or random.
    #[arg(long, default_value = "label")]
    pub order: String,
    /// Output manifest path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct DeriveArgs {
    /// A SKL1 sample or a manifest JSON.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub modality: String,
    /// Graph JSON; a bundled preset matching the joint count when omitted.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Output file (sample input) or directory (manifest input).
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniform scripting; deriving draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// TOML config with dotted keys; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest to score.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Must match the checkpoint's stream when given.
    #[arg(long)]
    pub modality: Option<String>,
    /// Directory for scores.skl, report.json and report.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the checkpoint's many-shot threshold.
    #[arg(long)]
    pub many_threshold: Option<f64>,
    /// Override the checkpoint's few-shot threshold.
    #[arg(long)]
    pub few_threshold: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Accepted for uniform scripting; evaluation draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args, Debug)]
pub struct EnsembleArgs {
    /// Score matrices, one per stream, in preset order.
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    /// 4stream, 6stream or custom.
    #[arg(long, default_value = "custom")]
    pub preset: String,
    /// Comma-separated stream weights (equal when omitted).
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Checkpoint whose training histogram labels the shot groups.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for fused_scores.skl and, with a checkpoint, the report.
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniform scripting; fusion draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args, Debug)]
pub struct ReportArgs {
    /// Score matrix (SKL1).
    #[arg(long)]
    pub scores: PathBuf,
    /// Checkpoint providing the training histogram and thresholds.
    #[arg(long, conflicts_with = "train_manifest")]
    pub checkpoint: Option<PathBuf>,
    /// Training manifest providing the histogram.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub many_threshold: Option<f64>,
    #[arg(long)]
    pub few_threshold: Option<f64>,
    /// json, csv or both.
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Output path without extension; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accepted for uniform scripting; reporting draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Synth(a) => commands::synth(a),
        Cmd::MakeLt(a) => commands::make_lt(a),
        Cmd::Derive(a) => commands::derive(a),
        Cmd::Train(a) => commands::train(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Ensemble(a) => commands::ensemble(a),
        Cmd::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
