//! Thin binary wrapper: parses arguments, runs one command, prints its
//! metrics record, and maps every failure to `ERROR:<code>:` on stderr.

use clap::Parser;
use deepgmm::cli::{run, Cli};
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version exit successfully through here.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("ERROR:ConfigError: {e}");
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(record) => {
            println!("{record}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ERROR:{}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
