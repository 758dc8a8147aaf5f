use thiserror::Error;

/// Errors raised by tensor, model and solver operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("degenerate rotation: component {component} has a vanishing quadratic form")]
    DegenerateRotation { component: usize },

    #[error(
        "infeasible error bound: delta = {delta:e} is below the least-squares residual {ls_residual:e}"
    )]
    InfeasibleBound { delta: f64, ls_residual: f64 },

    #[error("generation failure: {0}")]
    GenerationFailure(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
