use thiserror::Error;

/// Errors raised by the regression library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Cholesky factorization failed even after adding every jitter level.
    #[error("numerical failure: factorization failed after jitter levels {jitters:?}")]
    NumericalFailure { jitters: Vec<f64> },

    #[error("numerical failure: {0}")]
    Quadrature(String),

    /// The two kNN radii used by the dimension estimator coincide.
    #[error("degenerate-ratio: kNN radii at k and ceil(k/2) are equal")]
    DegenerateRatio,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image decoding: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit code used by the command-line interface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalFailure { .. } | Error::Quadrature(_) | Error::DegenerateRatio => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}

pub(crate) fn invalid_input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
