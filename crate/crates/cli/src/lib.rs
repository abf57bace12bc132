//! The `tilkit` command line: argument parsing and subcommand dispatch.

pub mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Corpus cleaning, tokenizer training, model training and zero-shot
/// evaluation for small dedicated language models.
#[derive(Debug, Parser)]
#[command(name = "tilkit", version)]
pub struct Cli {
    /// Seed for every random choice; overrides the run config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean and deduplicate a JSON Lines corpus.
    Clean(CleanArgs),
    /// Train a byte-level BPE tokenizer.
    TrainTokenizer(TrainTokenizerArgs),
    /// Measure tokens per whitespace-separated word.
    Fertility(FertilityArgs),
    /// Encode a corpus into fixed-length training blocks.
    Pretokenize(PretokenizeArgs),
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Score a model on a multiple-choice or classification task.
    Eval(EvalArgs),
    /// Collect evaluation reports into a scaling table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Per-stage accounting as JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// Stage thresholds as JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Digests of documents already in another corpus (binary or hex lines).
    #[arg(long)]
    pub ref_hashes: Option<PathBuf>,
    /// Also write the digests of every kept document, as hex lines.
    #[arg(long)]
    pub hashes_out: Option<PathBuf>,
    /// Defaults to TILKIT_WORKERS or the number of CPUs.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainTokenizerArgs {
    /// JSON Lines documents with a "text" field.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = tilkit::tokenizer::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FertilityArgs {
    #[arg(long = "tokenizer", required = true)]
    pub tokenizers: Vec<PathBuf>,
    /// Plain UTF-8 text.
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretokenizeArgs {
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub block_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub run_config: PathBuf,
    /// Checkpoint (`.tkcp`) written by an earlier run of the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long)]
    pub task_config: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "eval", required = true)]
    pub evals: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit status: 0 on success, 1 on data errors, 2 on usage or
/// configuration errors.
pub fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code().clamp(0, 255) as u8;
        }
    };
    match commands::run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {:#}", e.inner());
            e.exit_code()
        }
    }
}
