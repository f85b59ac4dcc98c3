use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular geometry: coincident points at distance {distance:e} m")]
    SingularGeometry { distance: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid correlation matrix: {0}")]
    Correlation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl SimError {
    pub fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        SimError::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            SimError::Config(_) | SimError::Correlation(_) | SimError::Format { .. } => 2,
            SimError::SingularGeometry { .. }
            | SimError::Dimension { .. }
            | SimError::Degenerate(_)
            | SimError::Numerical(_) => 3,
            SimError::Io { .. } => 1,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
