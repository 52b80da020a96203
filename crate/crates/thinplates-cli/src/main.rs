//! Batch driver for the thinplates toolkit.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thinplates::limit_solvers::Problems;
use thinplates::Error;

use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "thinplates", version, about = "Thin elastic plate structures: limit models and 3D reference checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Deterministic single-threaded run.
    #[arg(long, global = true)]
    verify: bool,
    /// Comma-separated thickness list (overrides the config).
    #[arg(long, global = true, value_delimiter = ',', value_name = "a,b,c")]
    delta_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Check the skeleton hypotheses H1–H3.
    Validate,
    /// Solve the 3D problem per δ and report the decomposition estimates.
    Decompose,
    /// Solve the limit membrane problem.
    SolveMembrane,
    /// Solve the limit bending problem.
    SolveBending,
    /// Solve both limit problems.
    Solve,
    /// Run the δ → 0 convergence study.
    Converge,
    /// Numeric checks of the weighted inequalities on plane sectors.
    CheckLemmas,
}

fn load_config(cli: &Cli) -> thinplates::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if matches!(cli.command, Command::CheckLemmas) => RunConfig::default(),
        None => return Err(Error::Input("--config is required".into())),
    };
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(list) = &cli.delta_list {
        config.delta_list = list.clone();
    }
    config.mode.verify |= cli.verify;
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> thinplates::Result<Outcome> {
    let config = load_config(cli)?;
    if config.mode.verify {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| Error::Input(format!("cannot configure verification mode: {e}")))?;
    }
    match cli.command {
        Command::Validate => commands::validate(&config),
        Command::Decompose => commands::decompose(&config),
        Command::SolveMembrane => commands::solve(&config, Problems::Membrane),
        Command::SolveBending => commands::solve(&config, Problems::Bending),
        Command::Solve => commands::solve(&config, Problems::Both),
        Command::Converge => commands::converge(&config),
        Command::CheckLemmas => commands::check_lemmas(&config),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Inadmissible(_) | Error::Check(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail(reasons)) => {
            for r in reasons {
                eprintln!("FAIL: {r}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
