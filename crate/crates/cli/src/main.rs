use clap::{Parser, Subcommand};
use flatsaddle_cli::artifact::ArtifactDir;
use flatsaddle_cli::config::ExperimentConfig;
use flatsaddle_cli::{commands, init_threads, CliError, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "flatsaddle", version, about = "Level bands, transversality, extension and wave packet experiments")]
struct Cli {
    /// Directory receiving the JSON reports and CSV tables.
    #[arg(long, global = true, default_value = "artifacts")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(flatten)]
    Experiment(ExperimentConfig),
    /// Runs an experiment described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::usage("config", e.to_string()))
}

fn execute(cli: Cli) -> Result<bool> {
    init_threads()?;
    let cfg = match cli.command {
        Command::Experiment(c) => c,
        Command::Run { config } => load(&config)?,
    };
    cfg.validate()?;
    let dir = ArtifactDir::create(&cli.out)?;
    let outcome = commands::run(&cfg, &dir)?;
    for line in &outcome.lines {
        println!("{line}");
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
