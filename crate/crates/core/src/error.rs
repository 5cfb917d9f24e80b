use thiserror::Error;

/// Errors produced across the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hurwitz (spectral abscissa {0:.3e})")]
    NotHurwitz(f64),

    #[error("loop is not well-posed: {0}")]
    IllPosed(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("LMIs are infeasible: {0}")]
    Infeasible(String),

    #[error("structural assertion failed: {0}")]
    Structure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
