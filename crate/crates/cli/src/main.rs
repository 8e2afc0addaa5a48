use std::process::ExitCode;

use clap::Parser;
use edgealloc_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let stdout = std::io::stdout();
    match edgealloc_cli::run(&cli, argv, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
