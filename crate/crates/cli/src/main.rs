mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;

#[derive(Parser)]
#[command(name = "droplet", version, about = "Droplet evaporation in stagnant, Stokes and acoustic streaming flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a field snapshot every N steps.
    #[arg(long, value_name = "N")]
    pub snapshots: Option<usize>,
    /// Replay each run and require bit-identical output.
    #[arg(long)]
    pub seedless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation to extinction or t_end.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Also dump the first-step matrices as coordinate triplets.
        #[arg(long)]
        dump_matrices: bool,
    },
    /// Compare a stagnant run with the d²-law.
    #[command(name = "validate-d2law")]
    ValidateD2law {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the invariant and property suite.
    Verify {
        /// Only checks whose name contains this string.
        #[arg(long)]
        only: Option<String>,
        /// Print the check names and exit.
        #[arg(long)]
        list: bool,
        /// Accepted for symmetry; the suite is already deterministic.
        #[arg(long)]
        seedless: bool,
    },
    /// Run the configured flow variants concurrently and compare lifetimes.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Refinement tables and the fixed-point contraction report.
    Convergence {
        /// Enables the d²-slope refinement and the contraction report.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the CSV tables.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid levels of the manufactured-solution study.
        #[arg(long, default_value_t = 4)]
        levels: usize,
        /// Grid/dt levels of the d²-slope study (0 skips it).
        #[arg(long, default_value_t = 0)]
        d2_levels: usize,
        /// Horizon of the contraction report (s); defaults to half the admissible bound, at most 10 s.
        #[arg(long)]
        t_star: Option<f64>,
        /// Accepted for symmetry; the studies are already deterministic.
        #[arg(long)]
        seedless: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { run, dump_matrices } => commands::simulate(&run, dump_matrices),
        Command::ValidateD2law { run } => commands::validate_d2law(&run),
        Command::Verify { only, list, seedless: _ } => commands::verify(only.as_deref(), list),
        Command::Sweep { run } => commands::sweep(&run),
        Command::Convergence { config, out, levels, d2_levels, t_star, seedless: _ } => {
            commands::convergence(config.as_deref(), out.as_deref(), levels, d2_levels, t_star)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Solver(m) | Failure::Invariant(m) => f.write_str(m),
        }
    }
}
