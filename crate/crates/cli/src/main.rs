mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use merge_index::IndexConfig;

#[derive(Parser, Debug)]
#[command(name = "mergeidx", version, about = "Streaming item indexing with a dynamic hierarchical codebook")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic item stream and its ground-truth sidecar.
    Gen(GenArgs),
    /// Train a codebook over a stream file.
    Train(TrainArgs),
    /// Build the coarse layer of a trained codebook.
    Merge(MergeArgs),
    /// Look up codes for embeddings.
    Assign(AssignArgs),
    /// Compute the evaluation reports.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar; defaults to `<out>.truth.csv`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub items: usize,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub clusters: u64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub tags: u32,
    #[arg(long, default_value_t = 10.0)]
    pub concentration: f64,
    #[arg(long, default_value_t = 1.0)]
    pub zipf: f64,
    /// Center rotation per drift period, radians.
    #[arg(long, default_value_t = 0.002)]
    pub drift: f64,
    #[arg(long, default_value_t = 1024)]
    pub drift_period: usize,
    #[arg(long, default_value_t = 0.3)]
    pub tag_coherence: f64,
    #[arg(long, default_value_t = 10_000_000)]
    pub max_popularity: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Flags mirroring [`IndexConfig`]; unset flags keep the defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau_prime: Option<f64>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub growing_window: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub silhouette_threshold: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Embedding dimension; inferred from the stream when omitted.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub recycle_capacity: Option<usize>,
    #[arg(long)]
    pub monitor_occupancy: Option<bool>,
}

impl ConfigArgs {
    pub fn apply(&self, mut c: IndexConfig) -> IndexConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(tau, gamma, tau_prime, min_cluster_size, eps1, eps2, growing_window, lambda, silhouette_threshold, batch_size, dim, monitor_occupancy);
        if self.recycle_capacity.is_some() {
            c.recycle_capacity = self.recycle_capacity;
        }
        c
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Merge,
    Vq,
    Rq,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricArg {
    Cosine,
    Euclidean,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::Merge)]
    pub algo: Algo,
    /// Codebook output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Assignment index output; defaults to `<out>.index.csv`.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Per-step JSON lines; defaults to `<out>.steps.jsonl`.
    #[arg(long)]
    pub step_log: Option<PathBuf>,
    /// Codebook size K for vq/rq.
    #[arg(long, default_value_t = 500)]
    pub codebook_size: usize,
    /// Residual layers for rq.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub target: usize,
    #[arg(long, default_value_t = merge_index::hierarchy::DEFAULT_MAX_ROUNDS)]
    pub max_rounds: usize,
    /// Output codebook; defaults to rewriting the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Assignment index whose coarse codes should be filled in place.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Overrides for lambda / silhouette_threshold; others are ignored.
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct AssignArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    /// Embeddings in stream format.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    /// Training-time assignment index. Without it, codes come from the
    /// matching rule (merge) or nearest codeword (vq/rq).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Ground-truth sidecar for pairwise scores.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Second codebook for a side-by-side comparison.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub compare_index: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub sample_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturbation norm for the stability check; 0 trials skips it.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Merge(a) => commands::merge(&a),
        Command::Assign(a) => commands::assign(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
