use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "conflearn",
    version,
    about = "Learned confidence for out-of-distribution detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    #[command(subcommand)]
    GenData(GenData),
    /// Train a network with a confidence branch.
    Train(TrainArgs),
    /// Evaluate class probabilities and confidence on a grid.
    ConfidenceMap(MapArgs),
    /// Score in-distribution and OOD inputs and report detection metrics.
    OodEval(OodEvalArgs),
    /// Grid-search the input perturbation magnitude on a holdout.
    SweepEpsilon(SweepArgs),
    /// Choose a detection threshold.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenData {
    /// Points on [-1, 1]^2 labelled by the XOR of the coordinate signs.
    Xor {
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Fraction of labels flipped.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// `uniform` flips anywhere; `boundary` flips only near the axes.
        #[arg(long, value_enum, default_value = "uniform")]
        noise_model: NoiseModelArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniform U[0,1] or clipped Gaussian noise.
    Noise {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        kind: NoiseArg,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Affinely remap [0, 1] to `LO,HI`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        range: Option<(f64, f64)>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniform on [-outer, outer]^d with [-inner, inner]^d removed.
    Ring {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        inner: f64,
        #[arg(long, default_value_t = 3.0)]
        outer: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regular lattice, last axis fastest.
    Grid {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseModelArg {
    Uniform,
    Boundary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub min: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub max: f64,
    #[arg(long, default_value_t = 50)]
    pub resolution: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labelled dataset CSV (`x1,...,xd,label`).
    #[arg(long)]
    pub data: PathBuf,
    /// Flat `key=value` file; flags given here take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Comma-separated trunk layer widths.
    #[arg(long)]
    pub trunk_widths: Option<String>,
    #[arg(long)]
    pub head_width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda_init: Option<f64>,
    #[arg(long)]
    pub adjust_factor: Option<f64>,
    #[arg(long)]
    pub hint_probability: Option<f64>,
    #[arg(long)]
    pub model_out: PathBuf,
    #[arg(long)]
    pub history_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Points to evaluate; defaults to a lattice from the grid flags.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    Confidence,
    Softmax,
    Odin,
    All,
}

#[derive(Debug, Args)]
pub struct OodEvalArgs {
    #[arg(long, required_unless_present = "in_scores")]
    pub model: Option<PathBuf>,
    /// In-distribution features CSV.
    #[arg(long = "in", required_unless_present = "in_scores")]
    pub in_data: Option<PathBuf>,
    /// Out-of-distribution features CSV.
    #[arg(long = "out", required_unless_present = "out_scores")]
    pub out_data: Option<PathBuf>,
    /// Precomputed in-distribution scores (CSV with a `score` column).
    #[arg(long, requires = "out_scores", conflicts_with_all = ["model", "in_data", "out_data"])]
    pub in_scores: Option<PathBuf>,
    #[arg(long, requires = "in_scores")]
    pub out_scores: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "confidence")]
    pub scorer: ScorerArg,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// ODIN temperature.
    #[arg(long, default_value_t = conflearn::scorers::ODIN_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-sample scores as `scorer,set,sample_id,score`.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub in_data: PathBuf,
    #[arg(long = "out")]
    pub out_data: PathBuf,
    #[arg(long, value_enum, default_value = "confidence")]
    pub scorer: ScorerArg,
    /// Comma-separated magnitudes; by default 21 values up to 0.02 times
    /// the mean feature standard deviation of `--in`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = conflearn::scorers::ODIN_TEMPERATURE)]
    pub temperature: f64,
    /// Write the table as `epsilon,detection_error`.
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    TrueOod,
    Misclassified,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// In-distribution holdout; must be labelled for `misclassified`.
    #[arg(long = "in")]
    pub in_data: PathBuf,
    /// OOD holdout, required for `true-ood`.
    #[arg(long = "out")]
    pub out_data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "confidence")]
    pub scorer: ScorerArg,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = conflearn::scorers::ODIN_TEMPERATURE)]
    pub temperature: f64,
    /// Also write the result JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    Ok((lo, hi))
}
