use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed} rows, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("degenerate spectrum: no eigenvalue above the relative floor")]
    DegenerateSpectrum,

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("bound undefined at alpha=0")]
    BoundUndefined,

    #[error("no traces")]
    NoTraces,

    #[error("trace too short: {len} epochs, need at least {needed}")]
    TraceTooShort { len: usize, needed: usize },

    #[error("layer {layer}{}: {source}", .epoch.map(|e| format!(", epoch {e}")).unwrap_or_default())]
    Layer {
        layer: usize,
        epoch: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_layer(self, layer: usize, epoch: Option<usize>) -> Error {
        Error::Layer {
            layer,
            epoch,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
