use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    qjwork_cli::run(qjwork_cli::Cli::parse())
}
