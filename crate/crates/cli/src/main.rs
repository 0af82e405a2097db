mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use config::RunConfig;
use tvdbn::Error;

#[derive(Parser)]
#[command(
    name = "tvdbn",
    version,
    about = "Time-varying DBN structure learning and graph-convolution forecasting",
    after_help = "Configuration is a flat file of `key = value` lines (`#` starts a comment); \
                  --set overrides it and TVDBN_SEED overrides the seed. Run `tvdbn keys` for every key and its default."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset and its ground-truth graphs.
    Synth,
    /// Train the structure learner; writes checkpoint, split manifest and history.
    TrainStructure,
    /// Train the forecaster on graphs from the configured source.
    TrainForecast,
    /// Forecast every window of the evaluation split.
    Predict,
    /// Score a forecast file per horizon.
    Evaluate,
    /// Export learned per-window graphs as an edge list.
    ExportGraphs,
    /// Run the finite-difference gradient suite.
    Gradcheck,
    /// Print every configuration key with its default.
    Keys,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn build_config(cli: &Cli) -> tvdbn::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{}'", kv)))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Ok(seed) = std::env::var("TVDBN_SEED") {
        cfg.set("seed", &seed)?;
    }
    cfg.check()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = build_config(&cli).and_then(|cfg| match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::TrainStructure => commands::train_structure(&cfg),
        Command::TrainForecast => commands::train_forecast(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::ExportGraphs => commands::export_graphs(&cfg),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Keys => {
            print!("{}", RunConfig::describe());
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
