use std::path::PathBuf;

use rovdock_core::guidance::GuidanceError;
use rovdock_core::layout::LayoutError;
use rovdock_core::mission::MissionError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    /// A file written by a different schema version.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("malformed log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for anything wrong with the inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Mission(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
