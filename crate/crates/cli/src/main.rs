mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};

/// Exit codes: 0 success, 1 environment or I/O, 2 validation or data, 64 usage.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Data(_) => 2,
            Failure::Usage(_) => 64,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Data(m) => m,
        }
    }
}

impl From<snapdiag_core::Error> for Failure {
    fn from(e: snapdiag_core::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };

    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Validate(a) => commands::validate(a),
        Command::Serve(a) => commands::serve(a),
        Command::Query(a) => commands::query(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("snapdiag: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
