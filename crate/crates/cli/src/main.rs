//! `cmdlm`: grammars, corpora, language models, rescoring, evaluation and
//! the end-to-end experiment runner behind one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

mod corpus_cmd;
mod error;
mod exp_cmd;
mod grammar_cmd;
mod io;
mod lm_cmd;
mod models;
mod pipeline_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cmdlm", version, about = "Language models for spoken command recognition")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Command grammars and their automata.
    #[command(subcommand)]
    Grammar(grammar_cmd::GrammarCmd),
    /// Training folds, dataset statistics and noise mixing.
    #[command(subcommand)]
    Corpus(corpus_cmd::CorpusCmd),
    /// Backoff n-gram models.
    #[command(subcommand)]
    Ngram(lm_cmd::NGramCmd),
    /// Recurrent language models.
    #[command(subcommand)]
    Rnnlm(lm_cmd::RnnCmd),
    /// Image-conditioned recurrent language models.
    #[command(subcommand)]
    Mmrnn(lm_cmd::MmCmd),
    /// Command-to-image association.
    #[command(subcommand)]
    Assoc(pipeline_cmd::AssocCmd),
    /// N-best rescoring.
    #[command(subcommand)]
    Rescore(pipeline_cmd::RescoreCmd),
    /// Word error rate and significance testing.
    #[command(subcommand)]
    Eval(pipeline_cmd::EvalCmd),
    /// End-to-end experiments.
    #[command(subcommand)]
    Exp(exp_cmd::ExpCmd),
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Grammar(c) => grammar_cmd::run(c),
        Cmd::Corpus(c) => corpus_cmd::run(c),
        Cmd::Ngram(c) => lm_cmd::run_ngram(c),
        Cmd::Rnnlm(c) => lm_cmd::run_rnn(c),
        Cmd::Mmrnn(c) => lm_cmd::run_mm(c),
        Cmd::Assoc(c) => pipeline_cmd::run_assoc(c),
        Cmd::Rescore(c) => pipeline_cmd::run_rescore(c),
        Cmd::Eval(c) => pipeline_cmd::run_eval(c),
        Cmd::Exp(c) => exp_cmd::run(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
