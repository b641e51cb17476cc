//! `bevlane` command line: synthetic data generation, lane fitting,
//! evaluation, anchor clustering, projection and SVG rendering.
//!
//! Exit status: 0 on success, 2 for usage and schema errors, 3 when a fit
//! objective becomes non-finite, 1 for anything else (I/O, degenerate input).

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bevlane::Execution;

#[derive(Debug, Parser)]
#[command(name = "bevlane", version, about = "Decoupled 3D lane toolkit")]
struct Cli {
    /// TOML file with a table per subcommand; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run per-frame work on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset of road scenes.
    Generate(commands::GenerateArgs),
    /// Fit lanes to every ground-truth lane of a dataset.
    Fit(commands::FitArgs),
    /// Score predictions against a dataset.
    Eval(commands::EvalArgs),
    /// Cluster the dataset's image lanes into anchors.
    Anchors(commands::AnchorsArgs),
    /// Replace 3D predictions by their image projections.
    Project(commands::ProjectArgs),
    /// Draw one frame as SVG.
    Render(commands::RenderArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(bevlane::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        use bevlane::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::Core(E::NonFinite { .. }) => 3,
            CliError::Core(E::Schema { .. } | E::Version { .. } | E::InvalidParameter(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl From<bevlane::Error> for CliError {
    fn from(e: bevlane::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => config::ConfigFile::load(p)?,
        None => config::ConfigFile::default(),
    };
    let exec = if cli.sequential || file.sequential == Some(true) {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Generate(a) => commands::generate(a.merged(&file)?, exec),
        Command::Fit(a) => commands::fit(a.merged(&file)?, exec),
        Command::Eval(a) => commands::eval(a.merged(&file)?, exec),
        Command::Anchors(a) => commands::anchors(a.merged(&file)?, exec),
        Command::Project(a) => commands::project(a.merged(&file)?),
        Command::Render(a) => commands::render(a.merged(&file)?),
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
