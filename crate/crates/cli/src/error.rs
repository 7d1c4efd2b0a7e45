use std::path::Path;

use thiserror::Error;

/// Exit status for unreadable or malformed inputs.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for a failed check (pipeline error, corpus mismatch).
pub const EXIT_FAILURE: i32 = 1;

/// A CLI failure. Displays as a single `ERROR <code> <message>` line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ERROR {code} {message}")]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: i32,
}

impl CliError {
    pub fn input(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: one_line(message.into()),
            exit: EXIT_INPUT,
        }
    }

    pub fn failure(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: one_line(message.into()),
            exit: EXIT_FAILURE,
        }
    }
}

fn one_line(s: String) -> String {
    if s.contains('\n') {
        s.split('\n').map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
    } else {
        s
    }
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input("io", format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::input("io", format!("{}: {e}", path.display())))
}
