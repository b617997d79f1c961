use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("integrity error: {message}: {}", ids.join(", "))]
    Integrity { message: String, ids: Vec<String> },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("encoding error in video {video_id} frame {frame_index}: {message}")]
    Encoding {
        video_id: String,
        frame_index: usize,
        message: String,
    },

    #[error("backend {0:?} is not available in this build")]
    BackendUnavailable(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("lookup error: no entry for {0:?}")]
    Lookup(String),

    #[error("numeric error: {message} (last stable epoch: {last_stable_epoch})")]
    Numeric { message: String, last_stable_epoch: usize },

    #[error("leakage audit failed for {} pair(s): {}", .0.len(), .0.join("; "))]
    Leakage(Vec<String>),

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("provenance error: {message} (run `{required}` first)")]
    Provenance { message: String, required: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for validation failures (including a backend this
    /// build lacks), 2 for runtime or numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Integrity { .. }
            | Error::Config(_)
            | Error::Consistency(_)
            | Error::Leakage(_)
            | Error::Provenance { .. }
            | Error::BackendUnavailable(_) => 1,
            Error::Fold { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
