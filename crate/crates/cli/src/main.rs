//! `stormloc` command-line entry point.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "stormloc", version, about = "Cyclone localization from wind fields with noisy track labels")]
pub struct Cli {
    /// Default output directory.
    #[arg(long, global = true, env = "STORMLOC_OUT", default_value = "runs")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset pack.
    Gen(GenArgs),
    /// Build a dataset pack from a manifest of gridded fields and track labels.
    Ingest(IngestArgs),
    /// Train, calibrate and write checkpoints.
    Train(TrainArgs),
    /// Localization and denoising metrics for a checkpoint.
    Eval(EvalArgs),
    /// Denoising report across label-noise rates.
    Sweep(SweepArgs),
    /// Render one sample as an SVG quiver plot.
    Plot(PlotArgs),
    /// Blinded preference study.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Run the preference study with the distance-based simulated rater.
    OracleStudy(OracleArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyCommand {
    /// Serve the study over HTTP.
    Serve(ServeArgs),
    /// Print the Model / Label / Neither / Total / p-value block.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GridArgs {
    /// Grid as `lat0,lon0,dlat,dlon,height,width`; defaults to the 32x56 one-degree grid.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.25)]
    pub corrupt_prob: f64,
    #[arg(long, default_value_t = 3)]
    pub offset_min: usize,
    #[arg(long, default_value_t = 10)]
    pub offset_max: usize,
    /// Background wind noise standard deviation, m/s.
    #[arg(long, default_value_t = 2.0)]
    pub background_sigma: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Output pack; defaults to `<out>/dataset.pack`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Manifest with the grid header line and `timestamp,lat,lon,field_file` rows.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Seed for the train/val/test assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset pack; defaults to `<out>/dataset.pack`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Epochs; defaults to 30 for desk and 100 for paper.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Seed for weight initialization.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    /// Seed for batch shuffling.
    #[arg(long, default_value_t = 0)]
    pub train_seed: u64,
    /// Skip temperature scaling.
    #[arg(long)]
    pub no_calibrate: bool,
    /// Directory for checkpoints and history; defaults to `<out>`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ModelInput {
    /// Dataset pack; defaults to `<out>/dataset.pack`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: ModelInput,
    /// Splits to report; all three by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub split: Vec<SplitArg>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Comma-separated label-corruption probabilities.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.25,0.4")]
    pub rates: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct PlotArgs {
    /// Dataset pack; defaults to `<out>/dataset.pack`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Optional checkpoint for the probability shading.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Sample index within the pack.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Output SVG; defaults to `<out>/sample-<index>.svg`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct StudySetup {
    #[command(flatten)]
    pub input: ModelInput,
    /// Items drawn per split.
    #[arg(long, default_value_t = 200)]
    pub n_items: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "test,train")]
    pub splits: Vec<SplitArg>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[command(flatten)]
    pub setup: StudySetup,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Judgment log; defaults to `<out>/study.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Send the probability overlay to raters (reveals the model marker).
    #[arg(long)]
    pub show_prob: bool,
    /// Directory of UI assets served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Literal tallies `name=model,label,neither`; repeatable. When given, no
    /// log is read.
    #[arg(long)]
    pub counts: Vec<String>,
    #[command(flatten)]
    pub setup: StudySetup,
    /// Judgment log; defaults to `<out>/study.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub setup: StudySetup,
    /// JSON tallies; defaults to `<out>/oracle-study.json`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.out, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
