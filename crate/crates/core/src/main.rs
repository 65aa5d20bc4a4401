use std::process::ExitCode;

use clap::Parser;
use speclens::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(bundle) => {
            print!("{}", bundle.summary);
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("speclens: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
