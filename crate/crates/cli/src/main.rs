//! `tsattack`: train time-series classifiers, attack them, sweep attack
//! hyperparameters and export the results.

mod commands;
mod manifest;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::UsageError;

#[derive(Parser, Debug)]
#[command(name = "tsattack", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a convolutional classifier on a UCR TSV split.
    Train(commands::TrainArgs),
    /// Attack every selected test series and report success rate and distance.
    Attack(commands::AttackArgs),
    /// Benchmark one attack over a range of gamma or alpha values.
    Sweep(commands::SweepArgs),
    /// Re-export a `reports.json` as CSV, JSON or SVG.
    Export(commands::ExportArgs),
    /// Generate a synthetic dataset as a pair of UCR TSV splits.
    Synth(commands::SynthArgs),
}

/// 2 for bad input (usage, config, missing files), 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<tsattack::Error>() {
            match e {
                tsattack::Error::Config(_) => return 2,
                tsattack::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => return 2,
                _ => {}
            }
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Attack(a) => commands::attack(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Export(a) => commands::export(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
