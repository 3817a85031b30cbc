use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geoflow_core::epdiff::{Integrator, ShootingConfig};
use geoflow_core::lddmm::Method;
use geoflow_gdn::GnoInit;

#[derive(Debug, Parser)]
#[command(name = "geoflow", version, about = "Geodesic shooting, LDDMM registration and geodesic network training")]
pub struct Cli {
    /// Worker threads; GEOFLOW_THREADS overrides this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    MakeData(MakeDataArgs),
    /// Shoot a geodesic from an initial velocity.
    Shoot(ShootArgs),
    /// Register a pair by optimizing the initial velocity.
    Register(RegisterArgs),
    /// Train the geodesic network on a manifest.
    Train(TrainArgs),
    /// Predict the geodesic between two images with a checkpoint.
    Predict(PredictArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Time network prediction against shooting.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MakeData(_) => "make-data",
            Command::Shoot(_) => "shoot",
            Command::Register(_) => "register",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Integration steps over the unit time interval.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    /// Exponent of the Laplacian operator.
    #[arg(long = "c", default_value_t = 3)]
    pub exponent: u32,
    #[arg(long, default_value = "euler")]
    pub integrator: Integrator,
}

impl MetricArgs {
    pub fn shooting(&self) -> ShootingConfig {
        ShootingConfig { steps: self.steps, alpha: self.alpha, exponent: self.exponent, integrator: self.integrator }
    }
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    /// Comma-separated families: circles, blob, triangle, envelope, or the groups id and ood.
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub dims: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, visible_alias = "out-dir")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShootArgs {
    #[arg(long)]
    pub v0: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long, visible_alias = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = geoflow_core::lddmm::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    /// Defaults to the optimizer's own step size.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value = "adam")]
    pub optimizer: Method,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long, visible_alias = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Joint,
    Alternating,
}

/// Unset values fall back to the library defaults.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest; trains on the train split and validates on val.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, visible_alias = "out-dir")]
    pub out: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weight of the geodesic loss.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Step size for the GNO parameters; defaults to `--lr`.
    #[arg(long)]
    pub gno_lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Evolution layers per GNO step (J).
    #[arg(long = "J", visible_alias = "layers")]
    pub layers: Option<usize>,
    /// Latent channels (C_z).
    #[arg(long = "C-z", visible_alias = "latent-channels")]
    pub latent_channels: Option<usize>,
    /// GNO hidden channels (C_h).
    #[arg(long = "C-h", visible_alias = "gno-channels")]
    pub gno_channels: Option<usize>,
    /// Highest retained Fourier mode per axis; all modes when unset.
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub gno_init: Option<GnoInit>,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Joint)]
    pub schedule: ScheduleArg,
    /// Epochs per phase of the alternating schedule.
    #[arg(long, default_value_t = 1)]
    pub period: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, visible_alias = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val, test or ood.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, visible_alias = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Square grid sizes to time.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, visible_alias = "out")]
    pub out_dir: PathBuf,
}
