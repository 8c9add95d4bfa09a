use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = nsedit_cli::Cli::parse();
    match nsedit_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nsedit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
