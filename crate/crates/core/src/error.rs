use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("unsupported dimensionality: {0}")]
    UnsupportedDims(String),

    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("no qualifying histogram peak")]
    NoPeak,

    #[error("no histogram bin above the mode")]
    NoTail,

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("singular transform: {0}")]
    SingularTransform(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of a numerical procedure rather than of the input
    /// data itself.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_) | Error::NonConvergence(_) | Error::SingularTransform(_) | Error::Degenerate(_)
        )
    }
}
