//! Thin command-line front end; all logic lives in the library.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure,
//! 4 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use etlearn::cli;
use etlearn::scenario::Policy;

#[derive(Parser)]
#[command(
    name = "etlearn",
    version,
    about = "Event-triggered learning for linear stochastic systems: closed-loop runs, policy comparisons, and trigger false-positive studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for compare/montecarlo (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write log.csv, metrics.json, events.json.
    Run {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Override the scenario's update policy (etl | permanent | never).
        #[arg(long, value_parser = parse_policy)]
        policy: Option<Policy>,
        /// Override the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run all three policies on paired seeds and write table1.json.
    Compare {
        scenario: PathBuf,
        /// Number of paired seeds (scenario seed, seed+1, ...).
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte Carlo false-positive rate of the trigger; writes fpr.json.
    Montecarlo {
        scenario: PathBuf,
        #[arg(long, default_value_t = 5000)]
        runs: usize,
        /// Significance level (default: the scenario's trigger level).
        #[arg(long)]
        alpha: Option<f64>,
        /// Step at which the trigger rate is evaluated.
        #[arg(long)]
        eval_step: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    Policy::parse(s).ok_or_else(|| format!("expected etl, permanent, or never, got \"{s}\""))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Run {
            scenario,
            policy,
            seed,
            out,
        } => cli::cmd_run(&scenario, policy, seed, &out),
        Command::Compare {
            scenario,
            seeds,
            out,
        } => cli::cmd_compare(&scenario, seeds, &out, cli.jobs),
        Command::Montecarlo {
            scenario,
            runs,
            alpha,
            eval_step,
            out,
        } => cli::cmd_montecarlo(&scenario, runs, alpha, eval_step, &out, cli.jobs),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code_for(&e) as u8)
        }
    }
}
