use thiserror::Error;

use crate::numkernel::CVec;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero matrix")]
    ZeroMatrix,

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Box<(CVec, f64)>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("position ({x}, {y}, {z}) lies outside the scene bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("invalid antenna subset: {0}")]
    InvalidSubset(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("normal equations are singular; use ridge > 0")]
    SingularNormalMatrix,

    #[error("{0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
