use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use growtas::Error;

mod commands;

/// Progressive weight-sharing architecture search on a desk-scale task.
#[derive(Debug, Parser)]
#[command(name = "growtas", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in lab defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Progressive supernet training (or the uniform baseline).
    Train {
        /// Sample uniformly from the whole space every step.
        #[arg(long)]
        baseline: bool,
        /// Continue from a checkpoint written by an earlier `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop and checkpoint once this many epochs are complete.
        #[arg(long)]
        stop_at: Option<usize>,
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Fine-tune outside the first subspace with its largest slice frozen.
    FinetunePlus {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Evolutionary search under a parameter limit.
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Largest admissible parameter count.
        #[arg(long)]
        constraint: Option<u64>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long, value_enum, default_value_t = Split::Val)]
        split: Split,
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Accuracy and loss of one subnet.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Encoding such as `e16-d2-r2:1.5-h2:1`.
        #[arg(long)]
        arch: String,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Count of architectures and the parameter range.
    Enumerate {
        /// Also write every architecture to `enumerate_<hash>.csv`.
        #[arg(long)]
        list: bool,
    },
    /// Diagnostic studies.
    Study {
        #[arg(value_enum)]
        kind: StudyKind,
        /// For `dist`: evaluate this store instead of training a pair.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// For `dist`: parameter constraint.
        #[arg(long)]
        constraint: Option<u64>,
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Validate a checkpoint or a stamped CSV and print its header.
    InspectCheckpoint { path: PathBuf },
    /// Write the task splits as `train.bin`, `val.bin`, `test.bin`.
    ExportTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyKind {
    GrowCrop,
    Cossim,
    Dist,
    AblateT1,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::HashMismatch { .. } => 3,
        Error::Numeric { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
