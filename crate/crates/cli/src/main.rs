use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecochash::error::ErrorCategory;
use ecochash::{Error, IndexMode, LossKind, RefreshPolicy};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "ecochash",
    version,
    about = "Online supervised hashing with growing ternary codes"
)]
struct Cli {
    /// Seed for codebook, initialization and stream orderings.
    #[arg(long, global = true, env = "ECOCHASH_SEED", default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Separation and bipartition-uniqueness diagnostics for a random codebook.
    CodebookStats(CodebookStatsArgs),
    /// Train a model on a labeled feature file.
    Train(TrainArgs),
    /// Build an index file from a model and a feature file.
    Index(IndexArgs),
    /// Rank index entries for every row of a query file.
    Query(QueryArgs),
    /// Mean average precision of an index, or a full multi-ordering experiment.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct CodebookStatsArgs {
    /// Bits per codeword core.
    #[arg(short, long)]
    pub k: usize,
    /// Pool size [default: min(1024, 2^(k-1))].
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Labels per cycle for the uniqueness probability [default: 4*ceil(log2 k)].
    #[arg(long)]
    pub rho: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Feature file (CSV or binary).
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub k: usize,
    /// Labels per cycle [default: 4*ceil(log2 k)].
    #[arg(long)]
    pub rho: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value = "hinge")]
    pub loss: LossKind,
    /// Codebook size [default: 4x the labels in the input, at most 2^(k-1)].
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Shuffle rows with this seed instead of streaming in file order.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Fit the normalizer on this file instead of the input.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Use raw features.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(short, long)]
    pub output_model: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, default_value = "codeword")]
    pub mode: IndexMode,
    /// Refresh policy stored with the index: eager or batched:<steps>.
    #[arg(long, default_value = "eager")]
    pub refresh: RefreshPolicy,
    /// In codeword mode, skip unlabeled rows instead of failing.
    #[arg(long)]
    pub skip_unlabeled: bool,
    #[arg(short, long)]
    pub output_index: PathBuf,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(short, long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model file (single evaluation).
    #[arg(short, long, conflicts_with = "full_experiment")]
    pub model: Option<PathBuf>,
    /// Index file (single evaluation).
    #[arg(long, conflicts_with = "full_experiment")]
    pub index: Option<PathBuf>,
    /// Labeled query rows.
    #[arg(short, long)]
    pub test: PathBuf,

    /// Retrain from scratch once per ordering and report every run.
    #[arg(long)]
    pub full_experiment: bool,
    /// Training rows (full experiment).
    #[arg(long, requires = "full_experiment")]
    pub train: Option<PathBuf>,
    /// Rows to index (full experiment).
    #[arg(long, requires = "full_experiment")]
    pub index_input: Option<PathBuf>,
    #[arg(short, long, default_value_t = 32)]
    pub k: usize,
    #[arg(long)]
    pub rho: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value = "hinge")]
    pub loss: LossKind,
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Number of stream orderings; ordering i uses seed + i.
    #[arg(long, default_value_t = 5)]
    pub orderings: usize,
    #[arg(long, default_value = "codeword")]
    pub mode: IndexMode,
    #[arg(long, default_value = "eager")]
    pub refresh: RefreshPolicy,
    /// Evaluation points along each stream.
    #[arg(long, default_value_t = 10)]
    pub checkpoints: usize,
    #[arg(long)]
    pub no_normalize: bool,
    /// Write the per-checkpoint curve CSV here.
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
    /// Fill the wall-time column of the curve (makes it non-reproducible).
    #[arg(long)]
    pub timings: bool,
    /// Write model-<i>.bin and index-<i>.bin of every ordering here.
    #[arg(long)]
    pub artifacts_dir: Option<PathBuf>,
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Input => 3,
        ErrorCategory::Config => 4,
        ErrorCategory::Capacity => 5,
        ErrorCategory::Lookup => 6,
        ErrorCategory::Consistency => 7,
        ErrorCategory::Data => 8,
        ErrorCategory::Io => 9,
    }
}

fn hint(err: &Error) -> Option<&'static str> {
    match err {
        Error::CodebookExhausted { .. } => {
            Some("more labels arrived than the codebook holds; retrain with a larger --capacity or a larger k")
        }
        Error::Capacity { .. } => Some("the codebook can hold at most 2^(k-1) codewords"),
        Error::Consistency(_) => Some("the index must be built from the same model it is queried with"),
        _ => None,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CodebookStats(a) => commands::codebook_stats(a, cli.seed),
        Command::Train(a) => commands::train(a, cli.seed),
        Command::Index(a) => commands::index(a),
        Command::Query(a) => commands::query(a),
        Command::Eval(a) => commands::eval(a, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            if let Some(h) = hint(&err) {
                eprintln!("hint: {h}");
            }
            ExitCode::from(exit_code(err.category()))
        }
    }
}
