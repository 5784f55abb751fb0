use thiserror::Error;

/// Errors raised by the dynamics, analysis and training routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes or preconditions of an operation do not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value was supplied as input.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// The operation does not apply to this model variant (PhiNet vs SimSiam, X-PhiNet only, ...).
    #[error("mode error: {0}")]
    Mode(String),

    /// A configuration value is out of its admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The requested parameter value is outside what the method supports (e.g. ρ = 0).
    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    /// A structural assumption on the inputs does not hold (e.g. symmetric predictors).
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// A trajectory left the finite region or exceeded the norm guard.
    #[error("diverged after step {last_finite_step} (t = {time}): {reason}")]
    Divergence {
        last_finite_step: usize,
        time: f64,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn mode(msg: impl Into<String>) -> Self {
        Error::Mode(msg.into())
    }
}
