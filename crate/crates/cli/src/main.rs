use std::process::ExitCode;

use clap::Parser;
use pollcalc_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pollcalc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
