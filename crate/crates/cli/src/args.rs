use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use trainmap::semantics::{DEFAULT_GATE, DEFAULT_THRESHOLD};

#[derive(Debug, Parser)]
#[command(name = "trainmap", version, about = "Latent-state maps of neural network training runs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the per-checkpoint metrics of one or more bundles.
    Metrics(MetricsArgs),
    /// Fit Gaussian HMMs over a range of state counts and keep the BIC winner.
    Fit(FitArgs),
    /// Decode every seed and export the annotated training map.
    Map(MapArgs),
    /// Regress convergence time on state occupancy and flag detour states.
    Regress(RegressArgs),
    /// Sample synthetic trajectories from a model file.
    Sample(SampleArgs),
    /// k-means baseline over pooled observations.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Bundle directories or zip archives.
    #[arg(required = true)]
    pub bundles: Vec<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Comma-separated feature subset, e.g. `l2` for the single-feature baseline.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args)]
pub struct StateRange {
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Metrics CSV.
    pub metrics: PathBuf,
    /// Model JSON.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Selection table CSV [default: <output stem>.selection.csv].
    #[arg(long)]
    pub selection: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub range: StateRange,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = trainmap::ghmm::DEFAULT_VAL_FRAC)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub fit_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Metrics CSV.
    pub metrics: PathBuf,
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Graphviz DOT output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Map JSON [default: <output stem>.json].
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Accuracy a run must reach to count as converged.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// Metrics CSV with eval_acc filled in.
    pub metrics: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Report JSON.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Convergence CSV [default: <output stem>.convergence.csv].
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Significance level the regression must reach before detours are reported.
    #[arg(long, default_value_t = DEFAULT_GATE)]
    pub gate: f64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub runs: usize,
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    /// Metrics CSV of sampled observations.
    #[arg(short, long)]
    pub output: PathBuf,
    /// True state CSV [default: <output stem>.states.csv].
    #[arg(long)]
    pub states: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    pub metrics: PathBuf,
    /// Selection table CSV.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Per-observation cluster labels [default: <output stem>.labels.csv].
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub range: StateRange,
    #[arg(long, default_value_t = 0)]
    pub fit_seed: u64,
}
