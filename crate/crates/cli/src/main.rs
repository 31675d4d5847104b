mod args;
mod commands;
mod output;
mod verify;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

pub const EXIT_PARSE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NO_CONVERGENCE: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_PARSE, format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::new(EXIT_PARSE, format!("csv error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_PARSE);
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Verify(a) => verify::run(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("erasurenum {}: {f}", cli.command.name());
            ExitCode::from(f.code)
        }
    }
}
