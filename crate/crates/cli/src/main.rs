//! `peg` — solve and simulate zero-sum pursuit-evasion games on grid worlds.

mod archive;
mod commands;
mod config;
mod error;
mod rooms;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{CommonArgs, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "peg",
    about = "Flat and hierarchical Nash solvers plus a simulator for grid-world pursuit-evasion games",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full joint game by Shapley value iteration.
    SolveFlat {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve the hierarchical decomposition: options, local games, then the
    /// aggregated game over superstates.
    SolveHier {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Pit solved policies against each other over seeded episodes.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Flat policy archive (provides `nash` sides).
        #[arg(long)]
        flat: Option<PathBuf>,
        /// Hierarchical policy archive (provides `hier` sides).
        #[arg(long)]
        hier: Option<PathBuf>,
        /// `all` or a comma list of `P:E` pairs, e.g. `nash:nash,hier:nash`.
        #[arg(long, default_value = "all")]
        matchups: String,
    },
    /// Emit per-world matrix-game counts (and optional solve timings) as CSV.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Map files; repeat for several worlds. Overrides --map.
        #[arg(long = "map", value_name = "PATH")]
        maps: Vec<PathBuf>,
        /// Also run the hierarchical pipeline and record phase timings.
        #[arg(long)]
        solve: bool,
        /// Also run the flat solve and record its timing.
        #[arg(long)]
        solve_flat: bool,
    },
    /// Dump a policy archive as text.
    Inspect {
        /// Archive path.
        path: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveFlat { common } => {
            let config = resolve(&common)?;
            commands::cmd_solve_flat(&config)
        }
        Command::SolveHier { common } => {
            let config = resolve(&common)?;
            commands::cmd_solve_hier(&config)
        }
        Command::Simulate {
            common,
            flat,
            hier,
            matchups,
        } => {
            let config = resolve(&common)?;
            commands::cmd_simulate(&config, flat.as_deref(), hier.as_deref(), &matchups)
        }
        Command::Bench {
            common,
            maps,
            solve,
            solve_flat,
        } => {
            let mut config = resolve(&common)?;
            // bench defaults to whole-room superstates unless told otherwise.
            if config.partition.is_none() && config.blocks.is_none() {
                config.blocks = Some(1);
            }
            commands::cmd_bench(&config, &maps, solve, solve_flat)
        }
        Command::Inspect { path } => commands::cmd_inspect(&path),
    }
}

fn resolve(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let config = RunConfig::resolve(common)?;
    if let Some(threads) = config.effective_threads() {
        // Ignore the error if a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(config)
}
