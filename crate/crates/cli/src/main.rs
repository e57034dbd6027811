//! `c5ed`: sampling masks, receptive-field checks, training, evaluation,
//! branch visualization and run replay.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "c5ed", version, about = "Dilated ensemble cascades for undersampled MRI reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a 1-D Gaussian column mask; writes PGM, CSV and JSON stats.
    Mask(MaskArgs),
    /// Closed-form vs empirical receptive field of every branch.
    Rf(RfArgs),
    /// Train on synthetic phantoms.
    Train(TrainArgs),
    /// Evaluate a checkpoint against the zero-filled baseline.
    Eval(EvalArgs),
    /// Write the per-branch intermediate images of the first stage.
    Branches(BranchesArgs),
    /// Re-run a train or eval run from its manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Args)]
pub struct MaskArgs {
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 320)]
    pub height: usize,
    #[arg(long, default_value_t = 4.0)]
    pub reduction: f64,
    #[arg(long, default_value_t = 0.05)]
    pub center_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for mask.pgm, mask.csv and mask.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RfArgs {
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// Phantom side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of phantoms, before the train/validation/test split.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub reduction: Option<f64>,
    #[arg(long)]
    pub center_fraction: Option<f64>,
    /// Give phantoms a smooth random phase.
    #[arg(long)]
    pub smooth_phase: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "tiny", conflicts_with = "spec")]
    pub preset: String,
    /// Network spec JSON file, instead of a preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the same training masks every epoch.
    #[arg(long)]
    pub freeze_masks: bool,
    /// Parent directory; the run goes in `<out>/<timestamp>-s<seed>`.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Exact run directory, overriding `--out`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Weight manifest (`best.json`) written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Root seed for phantoms and masks; defaults to the training run's.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// How many images to write as PGM.
    #[arg(long, default_value_t = 4)]
    pub max_images: usize,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct BranchesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seed of the phantom to reconstruct.
    #[arg(long, default_value_t = 0)]
    pub image_seed: u64,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 4.0)]
    pub reduction: f64,
    #[arg(long, default_value_t = 0.08)]
    pub center_fraction: f64,
    #[arg(long)]
    pub smooth_phase: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReplayArgs {
    /// A run directory or its manifest.json.
    pub manifest: PathBuf,
    /// Where to put the replayed run; defaults to `<run>/replay-<timestamp>`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Real,
    Complex,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Mask(a) => commands::mask(&a),
        Cmd::Rf(a) => commands::rf(&a),
        Cmd::Train(a) => commands::train(&a),
        Cmd::Eval(a) => commands::eval(&a),
        Cmd::Branches(a) => commands::branches(&a),
        Cmd::Replay(a) => commands::replay(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
