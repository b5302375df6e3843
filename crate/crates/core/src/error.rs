use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates an invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("duplicate key `{key}` on lines {first} and {second}")]
    DuplicateKey {
        key: String,
        first: usize,
        second: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed binary cube or CSV input.
    #[error("malformed input: {0}")]
    Format(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("degenerate signal: {0}")]
    Degenerate(String),

    /// The two range circles do not intersect in front of the baseline.
    #[error("infeasible pairing: {0}")]
    Infeasible(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("no detections: {0}")]
    NoDetections(String),

    #[error("no associations: {0}")]
    NoAssociations(String),

    /// Estimate and reference files disagree on target ids.
    #[error("target mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    /// Process exit status for this error: 2 configuration, 3 I/O or
    /// unreadable input, 4 no detections, 5 no associations, 6 eval mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format(_) => 3,
            Error::NoDetections(_) => 4,
            Error::NoAssociations(_) => 5,
            Error::Mismatch(_) => 6,
            // Remaining failures trace back to parameter choices.
            Error::Config(_)
            | Error::Syntax { .. }
            | Error::DuplicateKey { .. }
            | Error::Index { .. }
            | Error::Degenerate(_)
            | Error::Infeasible(_)
            | Error::InvalidInput(_) => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
