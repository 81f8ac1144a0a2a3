use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed weights document: {0}")]
    Weights(String),

    #[error("riccati iteration did not converge after {0} iterations")]
    RiccatiNonConvergence(usize),

    #[error("closed loop is not Hurwitz (max eigenvalue real part {0:e})")]
    NotHurwitz(f64),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("trajectory log is empty")]
    EmptyLog,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
