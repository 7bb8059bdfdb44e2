//! `superliouville`: meshes, scalar solves, weighted spectra, saddle searches and
//! reports from a TOML run configuration.
//!
//! Exit codes: 0 success, 1 solver or runtime failure (including failed checks),
//! 2 invalid input.

mod commands;
mod config;
mod io;
mod pipeline;
mod plot;
mod verify;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Solver(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solver(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<superliouville::Error> for CliError {
    fn from(e: superliouville::Error) -> Self {
        use superliouville::Error as E;
        if e.is_input_error() {
            // Core messages already carry their own prefix.
            return CliError::Input(e.to_string().trim_start_matches("invalid input: ").to_string());
        }
        match e {
            E::Solver { .. } | E::Search(_) | E::SingularJacobian { .. } | E::Eigen(_) => CliError::Solver(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "superliouville", version, about = "Super-Liouville boundary problems on planar surfaces with boundary")]
struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the mesh jitter and the searches.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Newton tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the mesh and report Gauss-Bonnet.
    Mesh {
        /// Also build the h/2 mesh and report the defect ratio.
        #[arg(long)]
        refine: bool,
    },
    /// Solve the scalar boundary problem for f.
    Liouville,
    /// Weighted Dirac spectrum for the weight f.
    Spectrum {
        /// Also write the eigenvector block as little-endian binary.
        #[arg(long)]
        save_basis: bool,
    },
    /// Find a non-trivial solution of the coupled system at the configured ρ.
    Solve,
    /// Solve over the `[sweep]` range of ρ, one directory per value.
    Sweep,
    /// Run the property checks and write a pass/fail table.
    Verify {
        /// Skip checks that need a mesh refinement.
        #[arg(long)]
        coarse: bool,
    },
    /// Summarize an existing output directory.
    Report {
        /// Directory to summarize; defaults to the configured output directory.
        dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    superliouville::linalg::use_sequential_kernels();
    let overrides = Overrides { out: cli.out, seed: cli.seed, tol: cli.tol };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Mesh { refine } => commands::mesh(&cfg, refine),
        Command::Liouville => commands::liouville(&cfg),
        Command::Spectrum { save_basis } => commands::spectrum(&cfg, save_basis),
        Command::Solve => commands::solve(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Verify { coarse } => verify::run(&cfg, coarse),
        Command::Report { dir } => commands::report(&dir.unwrap_or_else(|| cfg.output_dir())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
