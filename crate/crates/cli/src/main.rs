//! `wsed`: generate synthetic bags, train, score, post-process and evaluate.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.

mod commands;
mod config;
mod error;
mod files;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::*;

#[derive(Debug, Parser)]
#[command(
    name = "wsed",
    version,
    about = "Weakly-supervised sound event detection toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(gen_data::GenDataArgs),
    /// Train a model and write a checkpoint plus loss trace.
    Train(train::TrainArgs),
    /// Score every bag of a dataset with a checkpoint.
    Infer(infer::InferArgs),
    /// Turn frame scores into events (TSV).
    Postprocess(postprocess::PostprocessArgs),
    /// Event-based F-scores of a prediction TSV against a reference TSV.
    Eval(eval::EvalArgs),
    /// Pearson correlation between class score curves.
    Corr(corr::CorrArgs),
    /// Search per-class tagging thresholds on a development set.
    OptimizeThresholds(optimize::OptimizeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data::run(a),
        Command::Train(a) => train::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Postprocess(a) => postprocess::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Corr(a) => corr::run(a),
        Command::OptimizeThresholds(a) => optimize::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
