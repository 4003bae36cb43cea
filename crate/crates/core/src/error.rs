use thiserror::Error;

/// Errors surfaced by the kernels, analysis machinery, dynamics and harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-one update is singular (denominator {denominator:e})")]
    SingularUpdate { denominator: f64 },

    #[error("matrix is numerically singular (pivot {pivot:e})")]
    Singular { pivot: f64 },

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "confidence must lie in (0, 1), got {delta}"
        )))
    }
}
