use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kpbench_core::imputation::{ImputeMethod, DEFAULT_K};
use kpbench_core::models::Architecture;

#[derive(Debug, Parser)]
#[command(name = "kpbench", version, about = "Facial keypoint regression benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset in the training CSV layout
    Synth(SynthArgs),
    /// Fill missing keypoint labels
    Impute(ImputeArgs),
    /// Append augmented variants of the complete samples
    Augment(AugmentArgs),
    /// Train one model and save its weights
    Train(TrainArgs),
    /// Time inference and score saved weights
    Bench(BenchArgs),
    /// Work with report files
    #[command(subcommand)]
    Report(ReportCommand),
    /// Inspect architectures
    #[command(subcommand)]
    Model(ModelCommand),
    /// Run the model x imputation x augmentation grid end to end
    Grid(GridArgs),
    /// Random search over custom CNN shapes
    Tune(TuneArgs),
    /// Re-run the command recorded in a run manifest
    Replay { manifest: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn label(self) -> &'static str {
        match self {
            Toggle::On => "on",
            Toggle::Off => "off",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

pub fn parse_impute(s: &str) -> Result<ImputeMethod, String> {
    s.parse().map_err(|e: kpbench_core::Error| e.to_string())
}

pub fn parse_model(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: kpbench_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of rows reduced to 4 of the 15 landmarks
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long, value_parser = parse_impute)]
    pub method: ImputeMethod,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AugmentOptions {
    /// Maximum rotation in degrees
    #[arg(long, default_value_t = 15.0)]
    pub rot: f64,
    /// Maximum shift in pixels per axis
    #[arg(long, default_value_t = 8.0)]
    pub shift: f64,
    /// Brightness factor range is [1 - b, 1 + b]
    #[arg(long, default_value_t = 0.3)]
    pub bright: f64,
    /// Maximum Gaussian noise sigma in gray levels
    #[arg(long, default_value_t = 12.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 4)]
    pub variants: usize,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub aug: AugmentOptions,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// SGD momentum
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Epochs without improvement before stopping; 0 disables
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Stop once validation RMSE (px) falls below this
    #[arg(long)]
    pub target_rmse: Option<f64>,
    /// Neighbours for KNN imputation
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_model, required_unless_present = "spec", conflicts_with = "spec")]
    pub model: Option<Architecture>,
    /// Model spec JSON (for example from `tune`)
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// MobileNetV2 width multiplier
    #[arg(long, default_value_t = 1.0)]
    pub width: f64,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_impute, default_value = "none")]
    pub impute: ImputeMethod,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub augment: Toggle,
    #[command(flatten)]
    pub aug: AugmentOptions,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Architecture name; defaults to the spec saved next to the weights
    #[arg(long, value_parser = parse_model, conflicts_with = "spec")]
    pub model: Option<Architecture>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub width: f64,
    /// Labelled CSV used for RMSE and timing
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 7)]
    pub reps: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Imputation label recorded in the report row
    #[arg(long, default_value = "none")]
    pub impute: String,
    /// Augmentation label recorded in the report row
    #[arg(long, default_value = "off")]
    pub augment: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Concatenate report CSVs
    Merge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a report as an aligned table
    Show { input: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Layer table and parameter counts
    Describe {
        #[arg(value_parser = parse_model)]
        name: Architecture,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
    },
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Replay the grid recorded in this manifest instead of reading flags
    #[arg(long, exclusive = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_model, default_value = "baseline,manual,mobilenetv2")]
    pub models: Vec<Architecture>,
    #[arg(long, value_delimiter = ',', value_parser = parse_impute, default_value = "none,forward-fill,knn")]
    pub imputes: Vec<ImputeMethod>,
    #[arg(long, value_delimiter = ',', value_enum, default_value = "on,off")]
    pub augment: Vec<Toggle>,
    #[command(flatten)]
    pub aug: AugmentOptions,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 7)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, required_unless_present = "manifest")]
    pub out: Option<PathBuf>,
    /// Directory for per-cell training curves
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub budget: usize,
    #[arg(long, default_value_t = 3)]
    pub min_blocks: usize,
    #[arg(long, default_value_t = 5)]
    pub max_blocks: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    pub base_filters: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    pub dense_widths: Vec<usize>,
    #[arg(long, default_value_t = 3e-4)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 3e-3)]
    pub lr_max: f64,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Winning spec as JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Trial log CSV
    #[arg(long)]
    pub log: Option<PathBuf>,
}
