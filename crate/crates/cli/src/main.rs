use std::process::ExitCode;

use clap::Parser;
use nlqft_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) if outcome.failed => {
            eprintln!("nlqft: some records report failures");
            ExitCode::from(1)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nlqft: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
