mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rgbt_core::checkpoint::ModelKind;
use rgbt_core::metadata::WeatherMode;

/// Code version plus the metadata layout the binary reads and writes.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " layout_version=wx15-v1");

#[derive(Parser, Debug)]
#[command(name = "rgbt", version = VERSION, about = "Metadata-conditioned RGB to thermal translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic raw dataset (images, pairs.csv, weather fixtures).
    Synth(SynthArgs),
    /// Validate raw pairs, attach weather and write a dataset directory.
    Ingest(IngestArgs),
    /// Letterbox, saturate and stretch a dataset into model-ready form.
    Preprocess(PreprocessArgs),
    /// Train with grouped k-fold cross-validation and evaluate each fold.
    Train(TrainArgs),
    /// Show the grouped fold assignment of a dataset without training.
    Cv(CvArgs),
    /// Score a checkpoint on a processed dataset.
    Evaluate(EvaluateArgs),
    /// Predict a thermal map for one RGB image and metadata record.
    Infer(InferArgs),
    /// Render RGB | prediction | ground truth triptychs from an evaluation.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    groups: usize,
    #[arg(long, default_value_t = 120)]
    height: usize,
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory with rgb/, thermal/ and pairs.csv.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "fixture")]
    weather_mode: WeatherMode,
    /// Recorded weather responses; defaults to <in>/fixtures.
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 384)]
    size: usize,
    #[arg(long, default_value_t = 1.3)]
    saturation: f32,
    /// Contrast-stretch percentiles `lo,hi`.
    #[arg(long, default_value = "1,99")]
    stretch: String,
}

#[derive(Args, Debug, Clone)]
pub struct LpipsArgs {
    /// `seeded` (deterministic stand-in) or `pretrained` (needs --lpips-weights).
    #[arg(long)]
    lpips_backbone: Option<String>,
    #[arg(long)]
    lpips_seed: Option<u64>,
    /// safetensors file produced by scripts/export_lpips_alexnet.py.
    #[arg(long)]
    lpips_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Processed dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    /// TOML file with TrainConfig fields, or a run.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    folds: Option<usize>,
    /// Train only these folds (repeatable); all folds when absent.
    #[arg(long)]
    fold: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    finetune_lr: Option<f64>,
    #[arg(long)]
    lambda_l1: Option<f64>,
    /// Disable data augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Post-prediction blur applied before scoring.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[command(flatten)]
    lpips: LpipsArgs,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the assignment as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Processed dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[command(flatten)]
    lpips: LpipsArgs,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    rgb: PathBuf,
    /// JSON metadata record for the image.
    #[arg(long)]
    meta: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    render: RenderOpts,
}

#[derive(Args, Debug)]
struct RenderOpts {
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Display percentiles `lo,hi`.
    #[arg(long, default_value = "1,99")]
    norm: String,
    #[arg(long, default_value = "inferno")]
    cmap: String,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Evaluation output directory (holds predictions/ and evaluation.json).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Processed dataset; defaults to the one recorded by `evaluate`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    render: RenderOpts,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Cv(a) => commands::cv(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Infer(a) => commands::infer(a),
        Command::Render(a) => commands::render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn version_names_the_metadata_layout() {
        assert!(VERSION.ends_with(&format!("layout_version={}", rgbt_core::metadata::LAYOUT_VERSION)));
    }

    #[test]
    fn every_flag_is_documented() {
        Cli::command().debug_assert();
    }
}
