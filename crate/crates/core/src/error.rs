use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("temperature {0} °C is at or below the Tetens pole (-237.3 °C)")]
    Domain(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("bisection bracket failure: {0}")]
    Bracket(String),

    #[error("singular or ill-conditioned system: {0}")]
    Singular(String),

    #[error("nonlinear solve did not converge at step {step}: {detail}")]
    NonConvergence { step: usize, detail: String },

    #[error("invariant violated at step {step}: {detail}")]
    Invariant { step: usize, detail: String },

    #[error("inadmissible radius path: {0}")]
    InadmissiblePath(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
