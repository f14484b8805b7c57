//! Command implementations behind the `regclosure` binary.

pub mod commands;
pub mod config;
pub mod report;
pub mod rundir;
pub mod svg;

use std::path::{Path, PathBuf};

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] regclosure::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Report(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Report(_) => "report",
        }
    }

    /// One-line JSON summary for stderr.
    pub fn to_json(&self, command: &str) -> serde_json::Value {
        let mut v = json!({
            "command": command,
            "kind": self.kind(),
            "message": self.to_string(),
        });
        if let CliError::Core(regclosure::Error::Cell { cell, time, .. }) = self {
            v["cell"] = json!(cell);
            v["time"] = json!(time);
        }
        if let CliError::Io { path, .. } = self {
            v["path"] = json!(path.display().to_string());
        }
        json!({ "error": v })
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
