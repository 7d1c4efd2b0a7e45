//! Reading programs and policies from disk.

use std::path::Path;

use artiskit::mexfmt::{
    merge_programs, parse_perm_policy, parse_program, parse_taint_policy, verify_program, MexProgram,
    PermissionPolicy, TaintPolicy,
};

use crate::error::{read_file, CliError};

pub fn program(path: &Path) -> Result<MexProgram, CliError> {
    let text = read_file(path)?;
    parse_program(&text).map_err(|e| CliError::input("parse", format!("{}:{e}", path.display())))
}

/// Parses the app, merges the optional companion library and verifies.
pub fn verified_program(path: &Path, merge: Option<&Path>) -> Result<MexProgram, CliError> {
    let mut p = program(path)?;
    if let Some(lib) = merge {
        let companion = program(lib)?;
        p = merge_programs(&p, &companion).map_err(|e| CliError::input("merge", e.to_string()))?;
    }
    let diags = verify_program(&p);
    if let Some(first) = diags.first() {
        return Err(CliError::input(
            "verify",
            format!("{}: {} diagnostic(s), first: {first}", path.display(), diags.len()),
        ));
    }
    Ok(p)
}

pub fn taint_policy(path: &Path) -> Result<TaintPolicy, CliError> {
    let text = read_file(path)?;
    parse_taint_policy(&text).map_err(|e| CliError::input("policy", format!("{}: {e}", path.display())))
}

pub fn perm_policy(path: &Path) -> Result<PermissionPolicy, CliError> {
    let text = read_file(path)?;
    parse_perm_policy(&text).map_err(|e| CliError::input("policy", format!("{}: {e}", path.display())))
}
