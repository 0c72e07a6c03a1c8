use thiserror::Error;

/// Errors raised by the tensor-train, regression and control routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("state became non-finite at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error("interval {interval} failed: {source}")]
    Interval {
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical method itself (as opposed to bad
    /// input or IO).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) | Error::BlowUp { .. } => true,
            Error::Interval { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
