//! `momok`: train, evaluate, corrupt, report and gradient self-check.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 checkpoint/data incompatibility, 5 failed self-check, 1 anything else.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use momok_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "momok",
    version,
    about = "Multi-modal knowledge graph completion with relation-guided experts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoints, the loss trace and validation metrics to `out_dir`.
    Train(TrainArgs),
    /// Filtered MRR and Hit@1/3/10 of a checkpoint on one split.
    Eval(EvalArgs),
    /// Write a corrupted copy of a dataset directory.
    Corrupt(CorruptArgs),
    /// Per-relation channel MRR and mean gate/fusion weights of a checkpoint.
    Report(ReportArgs),
    /// Finite-difference check of every analytic gradient on a small model.
    Gradcheck(GradcheckArgs),
    /// List every config key.
    Keys,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides as `--key value` pairs, e.g. `--epochs 10 --lambda 1e-3`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

/// Where the evaluation data comes from: a config (paths, feature options,
/// corruption) and/or a dataset directory.
#[derive(Debug, Args)]
struct DataArgs {
    /// Config whose data settings are reused (e.g. the `config.txt` written by `train`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides the config's `data_dir`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write the per-relation, per-channel MRR table.
    #[arg(long)]
    per_modality: bool,
    /// Split tied scores instead of counting only strictly greater ones.
    #[arg(long)]
    tie_split: bool,
    /// Output directory (default: the checkpoint's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorruptArgs {
    /// Input dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// noise, missing or sparse.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Modalities touched by noise/missing, comma-separated.
    #[arg(long, default_value = "image,text")]
    modality: String,
    /// Noise standard deviation in standardized feature units.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated relation names, or `all`.
    #[arg(long, default_value = "all")]
    relations: String,
    /// Split of the per-relation MRR table.
    #[arg(long, default_value = "test")]
    split: String,
    /// Average gate weights over this many sampled entities (default: all).
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tie_split: bool,
    /// Output directory (default: the checkpoint's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Config of the checked model; defaults to `d = 8`, `K = 3` on the bundled five-entity graph.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sampled parameters per loss.
    #[arg(long, default_value_t = 150)]
    probes: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Test hook: doubles every analytic gradient so the check must fail.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
    /// Config overrides as `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    SelfCheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::SelfCheck(_) => 5,
            Failure::Core(e) => match e {
                Error::Config(_) | Error::Lookup { .. } => 2,
                Error::Io { .. }
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::Format(_)
                | Error::UnknownEntities { .. } => 3,
                Error::Compat(_) => 4,
                Error::Shape(_) | Error::Numeric(_) | Error::Contract(_) => 1,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::SelfCheck(msg) => write!(f, "gradient check failed\n{msg}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a.config.as_deref(), &a.overrides),
        Command::Eval(a) => commands::eval(&a),
        Command::Corrupt(a) => commands::corrupt(&a),
        Command::Report(a) => commands::report(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Keys => {
            commands::keys();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("momok: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
