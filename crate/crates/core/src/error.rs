use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value, spec field or call argument violated its contract.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("region out of bounds on axis {axis}: start {start} + size {size} > extent {extent}")]
    OutOfBounds {
        axis: usize,
        start: usize,
        size: usize,
        extent: usize,
    },

    #[error("could not find enough foreground placements after {attempts} attempts ({found} of {wanted})")]
    SamplingExhausted {
        attempts: usize,
        found: usize,
        wanted: usize,
    },

    #[error("non-finite value produced at node {node} ({op})")]
    NumericOverflow { node: usize, op: &'static str },

    #[error("{0}")]
    Usage(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tools: 1 validation, 2 numeric
    /// failure, 3 I/O or file format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. }
            | Error::OutOfBounds { .. }
            | Error::SamplingExhausted { .. }
            | Error::Usage(_) => 1,
            Error::NumericOverflow { .. } => 2,
            Error::Format { .. } | Error::Truncated { .. } | Error::Version { .. } | Error::Io { .. } => 3,
        }
    }
}
