//! `toolseg`: convert backbones, train, evaluate and predict.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(name = "toolseg", version, about = "Surgical tool segmentation with a dilated residual FCN")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a classification backbone into a fully convolutional network.
    Convert(ConvertArgs),
    /// Train on a sequence dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write CSV and table reports.
    Evaluate(EvaluateArgs),
    /// Segment a single image.
    Predict(PredictArgs),
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Parameter directory of a pretrained classifier; random weights if omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Number of segmentation classes.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..=255))]
    pub classes: u16,
    #[arg(
        long,
        value_parser = clap::builder::PossibleValuesParser::new(["8", "32"])
            .map(|s| s.parse::<usize>().expect("listed values are numbers"))
    )]
    pub output_stride: usize,
    /// Output checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
    /// Backbone layout: resnet101, resnet50, small or tiny.
    #[arg(long, default_value = "resnet101")]
    pub arch: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset root with one `images/` and `masks/` pair per sequence.
    #[arg(long)]
    pub data: PathBuf,
    /// `key = value` run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints, loss history and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Merge shaft and manipulator into a single tool class.
    #[arg(long)]
    pub binary: bool,
    /// Overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config file.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Overrides the config file.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Start from this checkpoint; overrides the config file.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for the reports.
    #[arg(long)]
    pub report: PathBuf,
    /// Evaluate against binary (tool / background) masks.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output label mask (PNG).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a blended visualisation, by default next to the mask.
    #[arg(long, num_args = 0..=1, value_name = "PATH")]
    pub overlay: Option<Option<PathBuf>>,
    /// Overlay opacity.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
    /// Palette file with `class R G B` lines.
    #[arg(long)]
    pub palette: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Convert(args) => commands::convert(&args),
        Command::Train(args) => commands::train(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Predict(args) => commands::predict(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.source());
            match err {
                CliError::Input(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(3),
            }
        }
    }
}
