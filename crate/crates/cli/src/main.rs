//! `geoclip` command-line tool.
//!
//! Failures print a single `error: <kind>: <message>` line on stderr and exit
//! nonzero (2 for usage errors, 1 otherwise).

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::commands::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&CliError::Usage(first_line(&e.to_string()))),
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn first_line(text: &str) -> String {
    let line = text.lines().next().unwrap_or("").trim();
    line.strip_prefix("error: ").unwrap_or(line).to_string()
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("error: {}: {}", e.kind(), first_line(&e.to_string()));
    ExitCode::from(e.exit_code())
}
