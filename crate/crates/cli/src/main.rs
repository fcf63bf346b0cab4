//! `eduvqa`: synthetic data, splits, MOS consolidation, training, prediction,
//! evaluation, gMAD and gradient self-check from the command line.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "eduvqa", version, about = "Quality assessment for generated educational video")]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Shared {
    /// Flat TOML file of model and schedule keys; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every artifact of the run.
    #[arg(long, global = true, default_value = "eduvqa-out")]
    pub out_dir: PathBuf,
    /// Storage precision of parameters and generated features.
    #[arg(long, global = true, value_enum)]
    pub dtype: Option<DTypeArg>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for eduvqa::numerics::DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F32 => eduvqa::numerics::DType::F32,
            DTypeArg::F64 => eduvqa::numerics::DType::F64,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted synthetic corpus: features, manifest.jsonl, recipe.json.
    Synth(SynthArgs),
    /// Stratified train/val/test splits of a manifest.
    Split(SplitArgs),
    /// Consolidate raw ratings into MOS with outlier screening.
    Mos(MosArgs),
    /// Train a model on one split and write best/last checkpoints.
    Train(TrainArgs),
    /// Score videos with a checkpoint.
    Predict(PredictArgs),
    /// Metrics of one or more prediction files against labels.
    Eval(EvalArgs),
    /// Pairs one model holds equal while the other separates them.
    Gmad(GmadArgs),
    /// Finite-difference check of every gradient on the micro configuration.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub videos: Option<usize>,
    /// Label noise on the planted channels.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Number of splits; seeds run from `--seed` upward.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Train, val and test proportions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.6, 0.2, 0.2])]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MosArgs {
    /// CSV with columns annotator_id,video_id,dimension,score.
    #[arg(long)]
    pub ratings: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split JSON from `split`; without it a 6:2:2 split is drawn with `--seed`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Component ablation row 1..=7.
    #[arg(long)]
    pub ablation: Option<u8>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Partition to score; `test` by default when a split is given.
    #[arg(long, value_enum)]
    pub partition: Option<PartitionArg>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Prediction CSVs (video_id,dimension,score), one per split.
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Labels from a manifest.
    #[arg(long, conflicts_with = "mos", required_unless_present = "mos")]
    pub manifest: Option<PathBuf>,
    /// Labels from a MOS CSV (video_id,dimension,score).
    #[arg(long)]
    pub mos: Option<PathBuf>,
    /// Row label in the table.
    #[arg(long, default_value = "EduVQA")]
    pub method: String,
    /// Skip the logistic mapping before PLCC and RMSE.
    #[arg(long)]
    pub no_logistic: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GmadArgs {
    /// NAME=PATH of the first model's prediction CSV.
    #[arg(long)]
    pub first: String,
    /// NAME=PATH of the second model's prediction CSV.
    #[arg(long)]
    pub second: String,
    #[arg(long, default_value = "overall_percept")]
    pub dimension: String,
    /// Defender tolerance; defaults to 5% of `--mos-range`.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub mos_range: f64,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.shared.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
