//! `allencahn`: batch front end for the splitting-scheme laboratory.
//!
//! Subcommands: `run` (single trajectory), `rates` (strong convergence
//! experiment), `probe` (moment / exponential-integrability statistics),
//! `selftest` (invariant suite). Exit codes: 0 success, 1 experiment
//! failure, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use allencahn_cli::commands::{self, Failure};
use allencahn_cli::config::ExperimentConfig;
use allencahn_cli::selftest;

#[derive(Parser)]
#[command(name = "allencahn", version, about = "Spectral splitting solvers for the stochastic Allen-Cahn equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from `[mc].seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from `[output].dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the worker count from `[mc].threads` (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Force deterministic reduction order. Reductions are ordered by
    /// sample index in any case, so this only asserts the guarantee.
    #[arg(long)]
    bit_repro: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Perturb the named check (testing hook for failure reporting).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write its norm time series.
    Run(ExperimentArgs),
    /// Estimate strong errors over a step-size ladder and fit the rate.
    Rates(ExperimentArgs),
    /// Monte Carlo probes of moment and exponential-integrability bounds.
    Probe(ExperimentArgs),
    /// Run the fast invariant suite.
    Selftest(SelftestArgs),
}

fn init_threads(config: &ExperimentConfig, cli_threads: Option<usize>) {
    let threads = cli_threads.unwrap_or(config.mc.threads);
    if threads > 0 {
        // Ignore the error if a pool already exists (e.g. repeated calls in
        // one process during tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(args) => {
            let config = ExperimentConfig::load(&args.config)?;
            init_threads(&config, args.threads);
            let eff = commands::effective(&config, args.seed, args.out);
            commands::cmd_run(&config, &eff)
        }
        Command::Rates(args) => {
            let config = ExperimentConfig::load(&args.config)?;
            init_threads(&config, args.threads);
            let eff = commands::effective(&config, args.seed, args.out);
            commands::cmd_rates(&config, &eff)
        }
        Command::Probe(args) => {
            let config = ExperimentConfig::load(&args.config)?;
            init_threads(&config, args.threads);
            let eff = commands::effective(&config, args.seed, args.out);
            commands::cmd_probe(&config, &eff)
        }
        Command::Selftest(args) => {
            let outcomes = selftest::run_all(args.corrupt.as_deref());
            let mut failures = 0;
            for o in &outcomes {
                println!("{} {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                if !o.passed {
                    failures += 1;
                }
            }
            if failures > 0 {
                Err(Failure::Runtime(format!("{failures} selftest check(s) failed")))
            } else {
                println!("selftest: all {} checks passed", outcomes.len());
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
