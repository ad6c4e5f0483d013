use std::process::ExitCode;

use clap::Parser;
use clic_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match clic_cli::commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("clic: {e}");
            ExitCode::from(e.code())
        }
    }
}
