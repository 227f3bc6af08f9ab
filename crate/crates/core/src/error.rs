use thiserror::Error;

/// Errors raised by projector construction, validation and integration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix evaluated at t = {t} contains non-finite entries")]
    NonFiniteMatrix { t: f64 },

    #[error("rank of A changes between t = {t0} (rank {rank0}) and t = {t1} (rank {rank1})")]
    RankChange {
        t0: f64,
        rank0: usize,
        t1: f64,
        rank1: usize,
    },

    #[error("invalid resolution: {0}")]
    InvalidResolution(String),

    #[error(
        "iteration matrix is numerically singular at t = {t} (sigma_min / sigma_max = {ratio:e})"
    )]
    SingularIterationMatrix { t: f64, ratio: f64 },

    #[error("constraint matrix A + RB is numerically singular at t = {t} (sigma_min / sigma_max = {ratio:e})")]
    SingularConstraintMatrix { t: f64, ratio: f64 },

    #[error("state norm {norm:e} exceeds guard radius at t = {t}")]
    Overflow { t: f64, norm: f64 },

    #[error("{which} returned non-finite values at t = {t}")]
    NonFiniteCoefficient { t: f64, which: &'static str },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Strips any step annotation and returns the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
