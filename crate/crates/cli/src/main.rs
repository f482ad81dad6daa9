use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::Common;

#[derive(Debug, Parser)]
#[command(name = "emosid", version, about = "Speaker identification in emotional speech with a GMM-DNN cascade")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute MFCC feature files for every manifest entry.
    Extract(commands::ExtractArgs),
    /// Train one GMM tag per (speaker, emotion) pair.
    TrainGmm(commands::TrainGmmArgs),
    /// Train the cascade network (and the network-alone baseline) on existing tags.
    TrainDnn(commands::TrainDnnArgs),
    /// Train tags and both networks.
    Train(commands::TrainArgs),
    /// Identify the speaker of one WAV file.
    Identify(commands::IdentifyArgs),
    /// Score the test split, or re-score saved trial records.
    Evaluate(commands::EvaluateArgs),
    /// Write the synthetic corpus.
    Synth(commands::SynthArgs),
    /// Check a manifest and print its protocol counts.
    ValidateManifest(commands::ValidateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Extract(a) => commands::extract(a, &cli.common),
        Command::TrainGmm(a) => commands::train_gmm(a, &cli.common),
        Command::TrainDnn(a) => commands::train_dnn(a, &cli.common),
        Command::Train(a) => commands::train(a, &cli.common),
        Command::Identify(a) => commands::identify(a, &cli.common),
        Command::Evaluate(a) => commands::evaluate(a, &cli.common),
        Command::Synth(a) => commands::synth(a, &cli.common),
        Command::ValidateManifest(a) => commands::validate_manifest(a, &cli.common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::exit_code_for(&e)
        }
    }
}
