use std::path::PathBuf;

/// Crate-wide error type for fallible, user-facing operations.
///
/// Internal tensor-shape violations are programmer errors and panic with a
/// message naming both shapes; everything reachable from configuration, file
/// input, or numerics at runtime surfaces here instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value (NaN or infinity) appeared at a named site.
    #[error("non-finite value detected in {site}")]
    NonFinite { site: String },

    /// A required input file is missing.
    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },

    /// I/O failure with the path it happened on.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Text parse failure with file position.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Checkpoint bytes did not match the expected format.
    #[error("checkpoint format error at byte offset {offset}: {message}")]
    CheckpointFormat { offset: u64, message: String },

    /// Checkpoint was written by an incompatible format version.
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    /// A training trial produced a non-finite loss and was aborted.
    #[error("trial diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn non_finite(site: impl Into<String>) -> Self {
        Error::NonFinite { site: site.into() }
    }
}
