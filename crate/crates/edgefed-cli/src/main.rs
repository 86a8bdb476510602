use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edgefed_cli::{config::ExperimentConfig, runner, RunnerError};

/// Federated intrusion-detection training simulator.
#[derive(Parser)]
#[command(name = "edgefed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(short, long, global = true, default_value = "edgefed.toml")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the preprocessing pipeline and sampling validation only.
    Prep,
    /// Train the centralized reference model with cross-validation.
    TrainCentral,
    /// Run one federated experiment over all configured seeds.
    Fed,
    /// Run the full component-toggle ablation matrix.
    Ablate,
    /// Run the gradient-inversion attack harness.
    Attack,
    /// Time Paillier keygen/encrypt/add/decrypt at configured key sizes.
    BenchCrypto,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match ExperimentConfig::from_path(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Prep => runner::run_prep(&cfg),
        Command::TrainCentral => runner::run_train_central(&cfg),
        Command::Fed => runner::run_fed(&cfg),
        Command::Ablate => runner::run_ablate(&cfg),
        Command::Attack => runner::run_attack(&cfg),
        Command::BenchCrypto => runner::run_bench_crypto(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunnerError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
