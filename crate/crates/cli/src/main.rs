//! `bsarec` command-line front end.

mod config;
mod diagnose;
mod evaluate;
mod output;
mod preprocess;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use bsarec::evaluation::Protocol;
use bsarec::{Error, ErrorKind, Exec};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bsarec", version, about = "Sequential recommendation with frequency-aware self-attention")]
struct Cli {
    /// Worker threads for batch gradients and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a raw interaction file and write it re-indexed with a stats file.
    Preprocess(PreprocessArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Spectral, decay and oversmoothing diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// One user per line: `<user> <item> <item> ...` in chronological order.
    pub raw: PathBuf,
    /// Minimum interactions per user and per item.
    #[arg(short, long, default_value_t = 5)]
    pub k: usize,
    /// Output file; the stats file is written next to it with a `.stats.json` suffix.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` config file.
    pub config: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Extra overrides, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run config; supplies the dataset and is checked against the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    pub protocol: Protocol,
    /// Seed of the negative sampler.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Evaluate the validation target instead of the test target.
    #[arg(long)]
    pub validation: bool,
    /// Keep history items among the full-ranking candidates.
    #[arg(long)]
    pub no_mask: bool,
    #[arg(long)]
    pub core_k: Option<usize>,
    /// Directory for the metrics files; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Random softmax attentions; needs no dataset.
    #[arg(long, conflicts_with = "checkpoint")]
    pub synthetic: bool,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Sequences for checkpoint diagnostics; random ones are drawn otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sequence length.
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// Largest power of the attention matrix.
    #[arg(long, default_value_t = 64)]
    pub tmax: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 3)]
    pub cutoff: usize,
    /// Width of the random signals and of untrained models.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Layer range for the per-layer profile, e.g. `1..8`.
    #[arg(long, value_parser = diagnose::parse_layers)]
    pub layers: Option<(usize, usize)>,
    /// Drop the inductive-bias branch (alpha = 0).
    #[arg(long)]
    pub pure_attention: bool,
    /// Blend weight for untrained models.
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "diagnostics")]
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn exec_for(threads: usize) -> bsarec::Result<Exec> {
    if threads == 0 {
        return Err(Error::InvalidArgument("--threads must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))?;
        return Ok(Exec::Parallel);
    }
    #[cfg(not(feature = "parallel"))]
    if threads > 1 {
        log::warn!("built without the `parallel` feature; running on one thread");
    }
    Ok(Exec::Sequential)
}

fn run(cli: Cli) -> bsarec::Result<()> {
    let exec = exec_for(cli.threads)?;
    match cli.command {
        Command::Preprocess(a) => preprocess::run(&a),
        Command::Train(a) => train::run(&a, exec),
        Command::Evaluate(a) => evaluate::run(&a, exec),
        Command::Diagnose(a) => diagnose::run(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
