use std::path::PathBuf;

use cuedepth_autodiff::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("configuration: {0}")]
    Config(String),

    #[error("scene generation failed for preset `{preset}`: {msg}")]
    Generation { preset: String, msg: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format: {0}")]
    Format(String),

    #[error("lookup: {0}")]
    Lookup(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("{op}: value {value} at pixel {index} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{op}: degenerate input ({msg})")]
    Degenerate { op: &'static str, msg: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::File {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    /// True for errors caused by an invalid configuration rather than by the
    /// data or the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
