//! `sternshape`: data generation, preprocessing, training, evaluation and
//! Grad-CAM from one binary. Exit codes: 0 success, 1 runtime error, 2 usage.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sternshape", version, about = "Inverse design of stern sections from pressure-contour images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset of hull variants, images and labels.
    GenData(GenDataArgs),
    /// Fit B-spline control polygons to an offsets file.
    Preprocess(PreprocessArgs),
    /// Offset RMSE of fit-then-reconstruct against the input offsets.
    Roundtrip(RoundtripArgs),
    /// Train one model on a dataset.
    Train(TrainArgs),
    /// Score checkpoints on a dataset split.
    Eval(EvalArgs),
    /// Grad-CAM heatmaps and overlays for one image.
    Gradcam(GradcamArgs),
    /// Merge CSV reports into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// `key = value` file with defaults for any flag below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// case1 | case1-1 | case2 | case2-1
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Train, validation and test fractions, e.g. `0.8,0.1,0.1`.
    #[arg(long)]
    split: Option<String>,
    /// Control points per section.
    #[arg(long)]
    controls: Option<usize>,
    /// Replace an existing dataset directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Offsets file (one or more sections).
    #[arg(long)]
    offsets: Option<String>,
    /// Output control-polygon file.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    controls: Option<usize>,
    /// Collinearity tolerance for straight-run removal, mm.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Offsets file to round-trip.
    #[arg(long, conflicts_with = "data")]
    offsets: Option<String>,
    /// Dataset directory; every sample of `--split` is round-tripped.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    controls: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Reconstructed points per section before interpolation.
    #[arg(long)]
    points: Option<usize>,
    /// Optional CSV output; the resolved config is written next to it.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<String>,
    /// Run directory for config, loss history and checkpoint.
    #[arg(long)]
    out: Option<String>,
    /// single | mt-conv0fc3 | mt-conv4fc3 | mt-conv8fc3
    #[arg(long)]
    variant: Option<String>,
    /// Channel width factor (1 is full width).
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate, divided by 10 every 100 epochs.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// single | multi (defaults to the model kind)
    #[arg(long)]
    loss: Option<String>,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    resume: bool,
    /// Replace an existing run directory's outputs.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    /// `name=path` of a checkpoint; repeat for several rows.
    #[arg(long = "model")]
    models: Vec<String>,
    #[arg(long)]
    split: Option<String>,
    /// control | offset | both
    #[arg(long)]
    protocol: Option<String>,
    /// Add the B-spline representation row to the offset report.
    #[arg(long)]
    floor: bool,
    #[arg(long)]
    points: Option<usize>,
    /// Output directory for the reports.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<String>,
    /// Input image (binary PGM).
    #[arg(long)]
    image: Option<String>,
    /// Task (section) index.
    #[arg(long, conflicts_with = "all_tasks")]
    task: Option<usize>,
    #[arg(long)]
    all_tasks: bool,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV report to merge; repeat for several.
    #[arg(long = "input")]
    inputs: Vec<String>,
    /// csv | markdown
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Roundtrip(a) => commands::roundtrip(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("usage error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.code())
        }
    }
}
