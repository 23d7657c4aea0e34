use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ig_cli::{StatsArgs, SynthArgs};

/// Synthetic dataset generation and corpus statistics.
#[derive(Parser)]
#[command(name = "datagen", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    Synth(SynthArgs),
    Stats(StatsArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let res = match Cli::parse().cmd {
        Cmd::Synth(a) => ig_cli::synth(&a),
        Cmd::Stats(a) => ig_cli::stats(&a).map(drop),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
