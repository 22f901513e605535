use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("data file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is 1-based; 0 means the whole file.
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("feature width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty bag{}", if .0.is_empty() { String::new() } else { format!(" '{}'", .0) })]
    EmptyBag(String),

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("non-finite gradient in block '{0}'")]
    NonFiniteGradient(&'static str),

    /// Training diverged. `epoch` is 1-based.
    #[error("non-finite {what} at epoch {epoch}, bag '{bag_id}'")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        bag_id: String,
    },

    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadIdxMagic { expected: u32, found: u32 },

    #[error("pool exhausted: {0}")]
    PoolExhausted(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Stable kebab-case identifier of the variant, for scripted callers.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound(_) => "not-found",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::WidthMismatch { .. } => "width-mismatch",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::EmptyBag(_) => "empty-bag",
            Error::StaleCache(_) => "stale-cache",
            Error::NonFiniteGradient(_) | Error::NonFinite { .. } => "non-finite",
            Error::BadIdxMagic { .. } => "bad-idx-magic",
            Error::PoolExhausted(_) => "pool-exhausted",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by the caller's configuration rather than by
    /// the data or by training itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::WidthMismatch { .. } | Error::InvalidArgument(_) | Error::Shape(_)
        )
    }
}
