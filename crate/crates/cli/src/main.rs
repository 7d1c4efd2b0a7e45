use std::io::Write;
use std::process::ExitCode;

use artiskit_cli::cmd::{dispatch, Cli};
use artiskit_cli::error::{CliError, EXIT_INPUT};
use clap::error::ErrorKind;
use clap::Parser;

fn exit(code: i32) -> ExitCode {
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::input("usage", first));
            return exit(EXIT_INPUT);
        }
    };
    match dispatch(&cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.stdout.as_bytes());
            let _ = std::io::stderr().write_all(out.stderr.as_bytes());
            exit(out.exit)
        }
        Err(e) => {
            eprintln!("{e}");
            exit(e.exit)
        }
    }
}
