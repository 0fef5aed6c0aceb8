use std::path::PathBuf;

/// Errors produced by the curriculum engine and its harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid reward group: {0}")]
    InvalidGroup(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("duplicate prompt id `{0}`")]
    DuplicateId(String),
    #[error("unknown prompt id `{0}`")]
    UnknownId(String),
    #[error("objective undefined: {0}")]
    Domain(String),
    #[error("optimizer did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: u64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (config, keys, files) rather
    /// than by a failure during a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::UnknownKey(_) | Error::Format { .. } => true,
            Error::AtIteration { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    pub(crate) fn at_iter(self, iter: u64) -> Error {
        Error::AtIteration {
            iter,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
