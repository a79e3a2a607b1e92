//! `mfglab` — experiment harness for the mean-field game laboratory.
//!
//! Subcommands: `simulate`, `solve-mfg`, `solve-nplayer`, `converge`,
//! `rates`. Every run is a pure function of `(config file, seed)`:
//! `--threads` changes wall-clock time only, and re-running a command with
//! identical inputs reproduces every output byte.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
//! 4 numerical abort.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Experiment;

#[derive(Parser)]
#[command(name = "mfglab", version, about = "Mean-field game laboratory harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's output block).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the solvers; affects speed only, never results.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the driftless state ensemble and dump it as MFGB.
    Simulate(CommonArgs),
    /// Solve the mean-field game by Picard iteration.
    SolveMfg(CommonArgs),
    /// Solve the N-player particle systems of the configured sweep.
    SolveNplayer(CommonArgs),
    /// Full convergence study: reference MFG plus the N sweep, with rate
    /// tables and slope fits.
    Converge(CommonArgs),
    /// Refit log-log slopes from an existing rates.csv.
    Rates(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Simulate(a)
        | Command::SolveMfg(a)
        | Command::SolveNplayer(a)
        | Command::Converge(a)
        | Command::Rates(a) => a,
    };

    if let Some(threads) = args.threads {
        if threads == 0 {
            eprintln!("config error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // Build the global pool up front; solvers never depend on its size.
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("config error: cannot initialize thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let experiment = match Experiment::load(&args.config, args.seed) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let out_flag = args.out.as_deref();

    let result = match &cli.command {
        Command::Simulate(_) => commands::simulate::run(&experiment, out_flag),
        Command::SolveMfg(_) => commands::solve_mfg::run(&experiment, out_flag),
        Command::SolveNplayer(_) => commands::solve_nplayer::run(&experiment, out_flag),
        Command::Converge(_) => commands::converge::run(&experiment, out_flag),
        Command::Rates(_) => commands::rates::run(&experiment, out_flag),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
