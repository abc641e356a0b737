use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The CLI maps each variant onto a process exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("shape mismatch at layer `{layer}`: {detail}")]
    LayerShape { layer: String, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model file: {0}")]
    Format(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("sampler for layer `{layer}` exhausted {attempts} rejection attempts")]
    SamplerExhausted { layer: String, attempts: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// 0 success, 2 config, 3 I/O, 4 training divergence, 5 sampler exhaustion.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Format(_) | Error::Dataset(_) => 3,
            Error::Divergence { .. } => 4,
            Error::SamplerExhausted { .. } => 5,
            _ => 2,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
