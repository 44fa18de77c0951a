use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use har_core::recurrent::Aggregation;
use har_core::training::Hyperparameters;

/// File name looked up inside the data directory when `--data` is absent.
pub const DEFAULT_DATA_FILE: &str = "WISDM_ar_v1.1_raw.txt";
/// Model file name used when `--model` is absent.
pub const DEFAULT_MODEL_FILE: &str = "model.lwhar";

#[derive(Debug, Parser)]
#[command(
    name = "har",
    version,
    about = "Lightweight LSTM activity recognition from accelerometer windows"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-class sample counts and parse statistics of a raw data file.
    Stats(StatsArgs),
    /// Segment, split and train; writes a model file and an epoch history.
    Train(TrainArgs),
    /// Evaluate a model on the split it was trained with.
    Eval(EvalArgs),
    /// Classify the last window of `x,y,z` rows.
    Predict(PredictArgs),
    /// Export sensor traces and training curves as plot-ready CSV.
    ExportPlots(ExportPlotsArgs),
    /// Compare analytic gradients with finite differences on a small network.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataSource {
    /// Raw data file (`subject,label,timestamp,x,y,z;` records).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory searched for the default data file when `--data` is absent.
    #[arg(long, env = "HAR_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

impl DataSource {
    pub fn resolve(&self) -> Option<PathBuf> {
        self.data
            .clone()
            .or_else(|| self.data_dir.as_ref().map(|d| d.join(DEFAULT_DATA_FILE)))
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub source: DataSource,
    /// Also write `class_distribution.csv` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Sum,
    Last,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Sum => Aggregation::Sum,
            AggregationArg::Last => Aggregation::Last,
        }
    }
}

/// Hyperparameter overrides; anything left unset keeps its default.
#[derive(Debug, Clone, Args)]
pub struct HyperparameterArgs {
    #[arg(long)]
    pub window_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight-decay coefficient.
    #[arg(long)]
    pub l2: Option<f64>,
    /// Units per LSTM layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// How the second layer's outputs are pooled over time.
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
}

impl HyperparameterArgs {
    pub fn resolve(&self) -> Hyperparameters {
        let d = Hyperparameters::default();
        Hyperparameters {
            window_size: self.window_size.unwrap_or(d.window_size),
            stride: self.stride.unwrap_or(d.stride),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            l2_coeff: self.l2.unwrap_or(d.l2_coeff),
            hidden: self.hidden.unwrap_or(d.hidden),
            layers: d.layers,
            seed: self.seed.unwrap_or(d.seed),
            aggregation: self.aggregation.map_or(d.aggregation, Into::into),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: DataSource,
    /// Output directory for the history file (and the model by default).
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Model file to write. Defaults to `<out-dir>/model.lwhar`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub hp: HyperparameterArgs,
    /// Fraction of windows (or subjects) used for training.
    #[arg(long, default_value_t = 0.7)]
    pub split_ratio: f64,
    /// Split by subject instead of by window.
    #[arg(long)]
    pub subject_split: bool,
    /// Skip per-channel z-score normalisation.
    #[arg(long)]
    pub no_normalize: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    /// Which windows to score; the split is recomputed from the model's seed.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Where `metrics.txt`, `per_class.csv`, `confusion_matrix.csv` and
    /// `predictions.csv` go.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// File of `x,y,z` rows; `-` or absent reads stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportPlotsArgs {
    /// Raw data file to extract per-activity sensor traces from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Epoch history written by `train`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Samples per trace.
    #[arg(long, default_value_t = 500)]
    pub max_samples: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    /// Time steps in the random window.
    #[arg(long, default_value_t = 6)]
    pub steps: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, value_enum, default_value_t = AggregationArg::Sum)]
    pub aggregation: AggregationArg,
    /// Pass/fail threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Perturb one analytic gradient entry before comparing (harness self-test).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}
