use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    /// Connectivity-constrained merging ran out of admissible pairs.
    #[error("connectivity graph has {components} components, cannot reach {target} clusters")]
    Disconnected { components: usize, target: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt pack at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    /// The external text encoder failed or returned an unusable vector.
    #[error("text encoder: {0}")]
    Encoder(String),

    #[error("{}: {source}", path.display())]
    Path {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn path(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Path { path: path.into(), source }
    }
}
