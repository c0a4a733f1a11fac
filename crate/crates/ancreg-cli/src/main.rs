//! Command-line front end for ancestor regression.
//!
//! Exit codes: 0 success, 2 usage, 3 input/config errors, 4 numerical
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod dataset;
mod manifest;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

/// Writes a file through a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

#[derive(Parser)]
#[command(
    name = "ancreg",
    version,
    about = "Ancestor discovery in linear structural equation models via nonlinear-response least squares"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate data from a model file into a CSV
    Simulate {
        /// Model file (see the repository docs for the format)
        #[arg(long)]
        spec: PathBuf,
        /// Number of rows to draw
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Test every column for being an ancestor of a target column
    Ancestors {
        #[arg(long)]
        data: PathBuf,
        /// Target column name or 1-based index
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Nonlinearity: cube, sign-square, tanh
        #[arg(long, default_value = "cube")]
        f: String,
        /// Report Holm p-values without capping them at 1
        #[arg(long)]
        no_cap: bool,
        /// Skip mean-centering (for data centered by construction)
        #[arg(long)]
        no_center: bool,
        /// Input has no header row
        #[arg(long)]
        no_header: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Detect the full ancestor graph, per environment
    Graph {
        /// Input CSV; repeat the flag for one file per environment
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Column holding environment labels (single input file)
        #[arg(long)]
        env_column: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value = "cube")]
        f: String,
        #[arg(long)]
        no_cap: bool,
        #[arg(long)]
        no_center: bool,
        #[arg(long)]
        no_header: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Refine detected ancestors of a target into parents (t-tests)
    Parents {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value = "cube")]
        f: String,
        /// Comma-separated ancestor columns (skips the detection scan)
        #[arg(long)]
        ancestors: Option<String>,
        #[arg(long)]
        no_cap: bool,
        #[arg(long)]
        no_center: bool,
        #[arg(long)]
        no_header: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a configured simulation study and write its tables
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the seed from the configuration file
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { spec, n, seed, out } => commands::cmd_simulate(spec, *n, *seed, out),
        Command::Ancestors {
            data,
            target,
            alpha,
            f,
            no_cap,
            no_center,
            no_header,
            out_dir,
        } => commands::cmd_ancestors(&commands::AncestorsArgs {
            data,
            target,
            alpha: *alpha,
            f,
            cap: !no_cap,
            center: !no_center,
            has_header: !no_header,
            out_dir: out_dir.as_deref(),
        }),
        Command::Graph {
            data,
            env_column,
            alpha,
            f,
            no_cap,
            no_center,
            no_header,
            out_dir,
        } => commands::cmd_graph(&commands::GraphArgs {
            data,
            env_column: env_column.as_deref(),
            alpha: *alpha,
            f,
            cap: !no_cap,
            center: !no_center,
            has_header: !no_header,
            out_dir: out_dir.as_deref(),
        }),
        Command::Parents {
            data,
            target,
            alpha,
            f,
            ancestors,
            no_cap,
            no_center,
            no_header,
            out_dir,
        } => commands::cmd_parents(&commands::ParentsArgs {
            data,
            target,
            alpha: *alpha,
            f,
            cap: !no_cap,
            center: !no_center,
            has_header: !no_header,
            ancestors: ancestors.as_deref(),
            out_dir: out_dir.as_deref(),
        }),
        Command::Study {
            config,
            out_dir,
            seed,
        } => commands::cmd_study(config, out_dir, *seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
