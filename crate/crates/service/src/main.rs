use std::process::ExitCode;

use clap::Parser;
use echo_service::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echo: {e}");
            exit_code(&e)
        }
    }
}
