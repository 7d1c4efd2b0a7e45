use thiserror::Error;

use super::MexProgram;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("class '{0}' is defined by both programs")]
    ClassCollision(String),
}

/// Combines an application with a companion library before compilation.
/// App classes come first, then companion classes, each in original order;
/// the entry point is the app's.
pub fn merge_programs(app: &MexProgram, companion: &MexProgram) -> Result<MexProgram, MergeError> {
    if let Some(c) = companion
        .classes
        .iter()
        .find(|c| app.class(&c.name).is_some())
    {
        return Err(MergeError::ClassCollision(c.name.clone()));
    }
    let mut merged = app.clone();
    merged.classes.extend(companion.classes.iter().cloned());
    Ok(merged)
}
