//! `histtag`: command-line front end for the tagging pipeline.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors. Verbosity follows `RUST_LOG` (default `info`).

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use histtag::charlm::Direction;
use histtag::TagScheme;

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "histtag", version, about = "NER for noisy historic text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Extract a character vocabulary from CoNLL files and plain text.
    Vocab(VocabArgs),
    /// Corrupt a clean corpus with target-domain character noise.
    Smlm(SmlmArgs),
    /// Character language models.
    #[command(subcommand)]
    Lm(LmCmd),
    /// Named entity tagger.
    #[command(subcommand)]
    Ner(NerCmd),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Run every step of a configuration: vocab, smlm, lm, ner and eval.
    Pipeline(PipelineArgs),
    /// Re-run the command recorded in a manifest and compare output hashes.
    Replay(ReplayArgs),
    /// Write the synthetic demo dataset and its run configuration.
    ToyData(ToyDataArgs),
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CoNLL files; only the token column is read.
    #[arg(long = "conll")]
    pub conll: Vec<PathBuf>,
    /// Plain-text files.
    #[arg(long = "plain")]
    pub plain: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub token_column: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SmlmArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clean corpus, one sentence per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Target vocabulary: a vocabulary file or a CoNLL dataset.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub p_keep: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mask_char: Option<char>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// JSON statistics report.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum LmCmd {
    /// Train a forward or backward character LM.
    Train(LmTrainArgs),
    /// Sentence-averaged perplexity of a model on a corpus.
    Ppl(LmPplArgs),
}

#[derive(Args, Debug)]
pub struct LmTrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub direction: Direction,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Vocabulary file; extracted from the input when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub sequence_length: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Args, Debug)]
pub struct LmPplArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Read the input as CoNLL; sentences are space-joined tokens.
    #[arg(long)]
    pub conll: bool,
    #[arg(long, default_value_t = 0)]
    pub token_column: usize,
    /// JSON report.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum NerCmd {
    /// Train one or more tagger runs from a configuration.
    Train(NerTrainArgs),
    /// Tag a CoNLL file with a trained model.
    Predict(NerPredictArgs),
}

#[derive(Args, Debug)]
pub struct NerTrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Base seed; run `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NerPredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub token_column: usize,
    #[arg(long, default_value_t = 1)]
    pub tag_column: usize,
    /// The input has no gold column.
    #[arg(long)]
    pub no_gold: bool,
    #[arg(long, default_value_t = TagScheme::Iob2)]
    pub scheme: TagScheme,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// One file per run; several files are averaged.
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub gold_column: usize,
    /// Defaults to the last column of each prediction file.
    #[arg(long)]
    pub pred_column: Option<usize>,
    #[arg(long, default_value_t = TagScheme::Iob2)]
    pub scheme: TagScheme,
    /// JSON report.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

#[derive(Args, Debug)]
pub struct ToyDataArgs {
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(cli.command).and_then(|outcome| outcome.write_manifest(args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
