use std::fmt;
use std::path::Path;

use serde::Serialize;

/// Error reported to the user as one JSON object on stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), path: None }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("io", format!("{}: {e}", path.display())).with_path(path)
    }

    pub fn parse(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("parse", format!("{}: {e}", path.display())).with_path(path)
    }

    pub fn with_path(mut self, path: &Path) -> Self {
        self.path = Some(path.display().to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Adapts core errors into [`CliError`] with a stage-specific kind.
pub trait Stage<T> {
    fn stage(self, kind: &'static str) -> CliResult<T>;
}

impl<T, E: fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, kind: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::new(kind, e.to_string()))
    }
}
