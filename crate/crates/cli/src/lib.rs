//! Batch interface over the correlator engine and the Fock-space oracle.

pub mod commands;
pub mod config;
pub mod error;
pub mod records;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_compare, cmd_eval, cmd_graphs, cmd_scan, Outcome, RunFlags};
pub use config::{load, Loaded, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "nlqft", version, about = "Perturbative correlators of non-local interactions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the graphs contributing at the configured order.
    Graphs(CommonArgs),
    /// Evaluate the correlator at every configured external point.
    Eval(CommonArgs),
    /// Compare the grid engine with the Fock-space oracle.
    Compare(CommonArgs),
    /// Scan the cut-off correlator over the configured scales.
    Scan(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output file; defaults to the config's `output`, then stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Fill `elapsed_ms` in records (breaks byte-identical output).
    #[arg(long)]
    pub timing: bool,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Graphs(a) | Command::Eval(a) | Command::Compare(a) | Command::Scan(a) => a,
        }
    }
}

/// Runs one command; the outcome says whether any record failed.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let args = cli.command.args();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads: must be positive".into()));
        }
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let loaded = load(&args.config)?;
    let flags = RunFlags {
        seed: args.seed,
        timing: args.timing,
    };
    let target = args.out.clone().or_else(|| loaded.config.output.clone().map(|p| loaded.base_dir.join(p)));
    let mut out: Box<dyn Write> = match &target {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let outcome = match &cli.command {
        Command::Graphs(_) => cmd_graphs(&loaded, &mut out)?,
        Command::Eval(_) => cmd_eval(&loaded, &flags, &mut out)?,
        Command::Compare(_) => cmd_compare(&loaded, &flags, &mut out)?,
        Command::Scan(_) => cmd_scan(&loaded, &flags, &mut out)?,
    };
    out.flush()?;
    Ok(outcome)
}
