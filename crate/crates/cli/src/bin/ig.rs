use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ig_cli::{AblateArgs, ConfigArgs, EvalArgs, ScoreArgs, StatsArgs, SynthArgs, TrainArgs};

/// Intention grounding: data, training and evaluation.
#[derive(Parser)]
#[command(name = "ig", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a network.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and score the component ablations.
    Ablate(AblateArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
    /// Score an external prediction dump.
    Score(ScoreArgs),
    /// Print a preset run configuration.
    Config(ConfigArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let res = match Cli::parse().cmd {
        Cmd::Synth(a) => ig_cli::synth(&a),
        Cmd::Train(a) => ig_cli::train_cmd(&a),
        Cmd::Eval(a) => ig_cli::eval_cmd(&a).map(drop),
        Cmd::Ablate(a) => ig_cli::ablate(&a),
        Cmd::Stats(a) => ig_cli::stats(&a).map(drop),
        Cmd::Score(a) => ig_cli::score(&a).map(drop),
        Cmd::Config(a) => {
            ig_cli::print_config(&a);
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
