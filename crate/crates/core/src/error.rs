use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    Conditioning { pivot: usize, value: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unsupported op in graph: {0}")]
    UnsupportedOp(String),

    #[error("degenerate subspace: support matrix of class {class} is zero")]
    DegenerateSubspace { class: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged: non-finite loss in episode {episode}")]
    Divergence { episode: usize },

    #[error("confidence interval undefined for {0} episode(s); need at least 2")]
    CiUndefined(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
