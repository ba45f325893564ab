//! `dwhar`: train, evaluate, and probe sensor-decomposition activity
//! recognition models from the command line.

mod artifacts;
mod commands;
mod config;
mod data_io;

use clap::{Parser, Subcommand};
use dwhar_core::Error;

#[derive(Parser)]
#[command(
    name = "dwhar",
    version,
    about = "Modality-decomposed human activity recognition: synthetic data, training, evaluation, and model probes",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-sensor activity dataset
    Synth(commands::synth::SynthArgs),
    /// Train a model on a manifest dataset
    Train(commands::train::TrainArgs),
    /// Evaluate a trained model on a manifest dataset
    Eval(commands::eval::EvalArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Report parameter count, FLOPs, and forward timings
    Bench(commands::bench::BenchArgs),
    /// Export cross-sensor attention weights as CSV
    #[command(name = "export-attention")]
    ExportAttention(commands::export::ExportArgs),
}

fn run(cli: &Cli) -> dwhar_core::Result<i32> {
    match &cli.command {
        Cmd::Synth(args) => commands::synth::run(args),
        Cmd::Train(args) => commands::train::run(args),
        Cmd::Eval(args) => commands::eval::run(args),
        Cmd::Gradcheck(args) => commands::gradcheck::run(args),
        Cmd::Bench(args) => commands::bench::run(args),
        Cmd::ExportAttention(args) => commands::export::run(args),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Usage(_) => 2,
                Error::Config(_) => 3,
                Error::Data { .. } | Error::Format(_) => 4,
                Error::Io(_) => 5,
                Error::Internal(_) => 70,
            };
            std::process::exit(code);
        }
    }
}
