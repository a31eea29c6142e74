//! `popcast`: ingest, fit, evaluate, compare, predict, report and synth.
//!
//! Exit status: 0 on success (including fits with convergence warnings,
//! which are logged and recorded in the fit manifest), 2 for configuration
//! errors, 3 for data errors.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use popcast::Error;

use config::{Flags, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "popcast", version, about = "Bayesian early-popularity models for video games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Clean a catalog and player histories into game records.
    Ingest,
    /// Sample the posterior of one model.
    Fit,
    /// PSIS-LOO of a fit, optionally exact LOO and LOOIC by month.
    Evaluate,
    /// Bootstrap comparison of two or more fits.
    Compare,
    /// Predictive and what-if draws for games.
    Predict,
    /// Posterior summaries, contribution curves, genre and dataset reports.
    Report,
    /// Generate a synthetic catalog and histories with known parameters.
    Synth,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(EXIT_DATA, |e| if e.is_data_error() { EXIT_DATA } else { EXIT_CONFIG })
}

fn run(cli: Cli) -> anyhow::Result<commands::Outcome> {
    let cfg = RunConfig::load(&cli.flags)?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::Config("threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Compare => commands::compare(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Report => commands::report(&cfg),
        Command::Synth => commands::synth(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(outcome) => {
            if outcome.unconverged {
                log::warn!("fit finished with convergence warnings; see the manifest");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
