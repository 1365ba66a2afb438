use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the tracker stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A [`NetworkSpec`](crate::netmodel::NetworkSpec) violates its invariants.
    #[error("invalid network spec `{network}`: {reason}")]
    Spec { network: String, reason: String },

    /// Tensor shapes are incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Weights could not be loaded (pretrained file or checkpoint).
    #[error("load error: {0}")]
    Load(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Dataset or annotation problem.
    #[error("data error: {0}")]
    Data(String),

    #[error("frame error: {0}")]
    Frame(String),

    /// Configuration violations, all of them at once.
    #[error("config error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
