//! Command-line surface.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "ccal",
    about = "Dual-view embedding learning with a CCA projection layer, plus retrieval evaluation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset (CCAPAIRS file)
    GenData(GenDataArgs),
    /// Train a dual-view model on a paired dataset
    Train(TrainArgs),
    /// Evaluate cross-modality retrieval of a trained model
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Train and evaluate all three heads over several seeds
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output path for the CCAPAIRS file
    #[arg(long)]
    pub out: PathBuf,
    /// Dimensionality of the first view
    #[arg(long)]
    pub dx: usize,
    /// Dimensionality of the second view
    #[arg(long)]
    pub dy: usize,
    /// Shared latent dimensionality (must not exceed min(dx, dy))
    #[arg(long)]
    pub latent: usize,
    /// Number of paired samples
    #[arg(long)]
    pub samples: usize,
    /// Mixing applied to the latent signal: linear or tanh
    #[arg(long, default_value = "linear")]
    pub mixing: String,
    /// Noise standard deviation on the first view
    #[arg(long = "noise-x", default_value_t = 0.1)]
    pub noise_x: f64,
    /// Noise standard deviation on the second view
    #[arg(long = "noise-y", default_value_t = 0.1)]
    pub noise_y: f64,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-latent-component signal scales, comma separated (default: all 1)
    #[arg(long = "latent-scales")]
    pub latent_scales: Option<String>,
}

/// Training hyperparameters shared by `train` and `compare`. Unset flags
/// fall back to the config file (if any), then to the built-in defaults.
#[derive(Debug, Args, Clone)]
pub struct HyperArgs {
    /// Optional flat `key = value` config file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding width
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated hidden widths of both towers (e.g. "64" or "64,32")
    #[arg(long)]
    pub hidden: Option<String>,
    /// Ranking-loss margin
    #[arg(long)]
    pub margin: Option<f64>,
    /// Sum the ranking hinge over both query directions
    #[arg(long)]
    pub symmetric: bool,
    /// Covariance regularization
    #[arg(long)]
    pub reg: Option<f64>,
    /// Initial learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Maximum training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before an LR reduction
    #[arg(long)]
    pub patience: Option<usize>,
    /// Factor the learning rate is divided by at each reduction
    #[arg(long = "lr-divisor")]
    pub lr_divisor: Option<f64>,
    /// Number of LR reductions before training stops
    #[arg(long)]
    pub reductions: Option<usize>,
    #[arg(long = "weight-decay")]
    pub weight_decay: Option<f64>,
    /// Master seed for initialization, shuffling, and splits
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of the dataset held out for validation
    #[arg(long = "val-fraction")]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Head mode: dcca (trace norm), learned, or ccal
    #[arg(long)]
    pub model: String,
    /// Training dataset (CCAPAIRS file)
    #[arg(long)]
    pub data: PathBuf,
    /// Output path for the model file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model file
    #[arg(long)]
    pub model: PathBuf,
    /// Paired dataset to evaluate on (CCAPAIRS file)
    #[arg(long)]
    pub data: PathBuf,
    /// Query direction: x2y, y2x, or both
    #[arg(long, default_value = "both")]
    pub direction: String,
    /// Training-set file to recompute CCA statistics on before evaluating
    #[arg(long = "refit-data")]
    pub refit_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Targets to check (repeatable); default: all of cca-layer, tno,
    /// ranking, mlp, end-to-end
    #[arg(long)]
    pub target: Vec<String>,
    /// Batch size
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    /// Input width of both views
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    /// Embedding width
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Covariance regularization
    #[arg(long, default_value_t = 1e-3)]
    pub reg: f64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Pass threshold on the max relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Paired dataset (CCAPAIRS file)
    #[arg(long)]
    pub data: PathBuf,
    /// Report file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Number of seed replicas per head
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// Fraction of the training split actually used (low-data regime)
    #[arg(long = "train-fraction", default_value_t = 1.0)]
    pub train_fraction: f64,
    /// Fraction of the dataset held out for testing
    #[arg(long = "test-fraction", default_value_t = 0.1)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub hyper: HyperArgs,
}
