//! `salforge`: generate synthetic data, train the small convnets, compute
//! saliency maps and run the Pointing Game experiments from JSON configs.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "salforge",
    version,
    about = "Saliency maps and Pointing Game experiments on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a generator config.
    GenData(GenDataArgs),
    /// Train a classifier on a dataset directory.
    Train(TrainArgs),
    /// Write saliency maps and overlays for samples of a dataset.
    Saliency(SaliencyArgs),
    /// Score saliency methods with the Pointing Game.
    PointingGame(PointingArgs),
    /// Run a randomisation / repeatability experiment grid.
    Experiment(ExperimentArgs),
    /// Rebuild the CSV reports from an experiment's details.json.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Generator config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training config (JSON): `{"arch": ..., "train": {...}}`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's architecture.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Method ids; repeat or separate with commas.
    #[arg(
        long = "method",
        value_delimiter = ',',
        default_value = "normgrad-conv3x3-combined"
    )]
    pub methods: Vec<String>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Sample ids; defaults to the first `--limit` defect samples of the split.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub limit: usize,
    /// Gaussian sigma applied to each map.
    #[arg(long)]
    pub smooth: Option<f64>,
    /// Backpropagate the predicted class instead of the label.
    #[arg(long)]
    pub predicted: bool,
    /// Saliency options (JSON): hook layers for single and combined maps.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PointingArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long = "method", value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Score unsmoothed maps.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub predicted: bool,
    /// Pointing config (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Grid config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// First repeat seed; the grid keeps its number of seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// details.json written by `experiment`.
    #[arg(long)]
    pub details: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Saliency(a) => commands::saliency(a),
        Command::PointingGame(a) => commands::pointing_game(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
