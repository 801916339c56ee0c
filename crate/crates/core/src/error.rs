use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called with arguments that violate its contract.
    #[error("misuse: {0}")]
    Misuse(String),

    #[error("pipeline state error: {0}")]
    PipelineState(String),

    /// Training diverged or another unrecoverable runtime condition.
    #[error("runtime abort: {0}")]
    Abort(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line driver:
    /// 2 configuration, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Misuse(_) => 2,
            Error::Data(_) | Error::Shape(_) | Error::Io { .. } | Error::Image(_) | Error::Json(_) => 3,
            Error::Checkpoint(_) => 3,
            Error::PipelineState(_) | Error::Abort(_) => 4,
        }
    }
}

pub(crate) fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}
