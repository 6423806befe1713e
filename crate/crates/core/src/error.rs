use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}:{line}: {cause}")]
    Parse {
        path: PathBuf,
        line: usize,
        cause: String,
    },

    #[error("slot {0} is empty")]
    EmptySlot(usize),

    #[error("unsupported codebook format version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("codebook file is truncated")]
    Truncated,

    #[error("codebook checksum mismatch")]
    Integrity,

    #[error("malformed codebook file: {0}")]
    Format(String),

    #[error("target size {target} is invalid for {available} active slots")]
    Target { target: usize, available: usize },

    #[error("merging two prototypes with zero total count")]
    ZeroMass,

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
