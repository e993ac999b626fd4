//! `umps`: datasets, training, sampling, completion, scoring and evaluation
//! for uniform matrix product state language models.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigFile, ScoreMode};
use crate::error::CliError;

/// Exit status for command-line usage mistakes.
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "umps", version, about = "Uniform matrix product state language models")]
struct Cli {
    /// JSON file with one optional object per command; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset of grammar members.
    Gen(GenFlags),
    /// Fit a model to a dataset.
    Train(TrainFlags),
    /// Sample strings matching a regex.
    Sample(SampleFlags),
    /// Fill the hole between a fixed prefix and suffix.
    Complete(CompleteFlags),
    /// Exact probabilities of strings or regex languages.
    Score(ScoreFlags),
    /// Fraction of regex-conditioned samples that belong to a grammar.
    Eval(EvalFlags),
}

#[derive(Debug, Args, Serialize)]
struct GenFlags {
    /// tomita1..tomita7 or motzkin.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grammar: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TrainFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Validation set (defaults to the training data).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    val: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bond_dim: Option<usize>,
    /// Where the best model is saved.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Per-epoch JSON lines (defaults to `<out>.history.jsonl`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    history: Option<PathBuf>,
    /// Symbols fixed ahead of those found in the data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alphabet: Option<String>,
    /// Scale of the random perturbation in the initial model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_noise: Option<f64>,
    #[command(flatten)]
    training: OptimizerFlags,
}

#[derive(Debug, Args, Serialize)]
struct OptimizerFlags {
    /// Seeds both the initial model and the minibatch order.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_floor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    clip_norm: Option<f64>,
    #[arg(long, value_parser = ["per_length", "all_strings"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    normalization: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct SampleFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    regex: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Cap on total star repetitions per sample.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_star_reps: Option<usize>,
    /// Write samples here instead of stdout.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CompleteFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    prefix: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    suffix: Option<String>,
    /// Regex for the missing part (default `.`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hole: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ScoreFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["string", "stdin"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    regex: Option<String>,
    #[arg(long, conflicts_with = "stdin", allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    string: Option<String>,
    /// Score each line of stdin as a string.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    stdin: bool,
    /// `fixed` divides by the mass of the query's length, `star` by the mass
    /// of all strings.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<ScoreMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grammar: Option<String>,
    /// Sampling regex (default `.{16}`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    regex: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Gen(f) => commands::gen(config::resolve("gen", &f, file)?),
        Command::Train(f) => commands::train(config::resolve("train", &f, file)?),
        Command::Sample(f) => commands::sample(config::resolve("sample", &f, file)?),
        Command::Complete(f) => commands::complete(config::resolve("complete", &f, file)?),
        Command::Score(f) => commands::score(config::resolve("score", &f, file)?),
        Command::Eval(f) => commands::eval(config::resolve("eval", &f, file)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
