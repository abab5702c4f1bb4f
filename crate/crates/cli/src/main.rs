//! Command line driver for the few-shot slot tagger.
//!
//! Exit status is 0 on success, 1 when a check fails and 2 for usage or
//! configuration errors.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fewtag::emission::{Ablation, Variant};
use fewtag::training::Decoder;

#[derive(Debug, Parser)]
#[command(name = "fewtag", version, about = "Few-shot slot tagging with collapsed label dependencies")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub decoder: Option<Decoder>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Switch off a component; repeatable.
    #[arg(long = "ablate", global = true)]
    pub ablate: Vec<Ablation>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// Relative-error tolerance for gradcheck.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a generated corpus, one CoNLL file per domain.
    Synth(commands::SynthArgs),
    /// Sample K-shot episodes from corpora into a JSON-lines file.
    SampleEpisodes(commands::SampleArgs),
    /// Train on episodes, early-stopping on dev episodes.
    Train(commands::TrainArgs),
    /// Decode episodes with a checkpoint and score them.
    Eval(commands::EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(commands::GradcheckArgs),
    /// Check corpora for format and BIO errors.
    Validate(commands::ValidateArgs),
}

/// Bad flags, configuration or paths.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl From<fewtag::Error> for UsageError {
    fn from(e: fewtag::Error) -> Self {
        UsageError(e.to_string())
    }
}

/// A check ran and did not pass.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<fewtag::Error>() {
        Some(
            fewtag::Error::Io { .. }
            | fewtag::Error::Config(_)
            | fewtag::Error::Parse { .. }
            | fewtag::Error::Schema(_)
            | fewtag::Error::Checkpoint(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
