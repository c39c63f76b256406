use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("validation error at record {index}: {message}")]
    Validation { index: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training error at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("accumulator overflow in layer {layer}")]
    Overflow { layer: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine-parsable code for each error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "E_PARSE",
            Error::Validation { .. } => "E_VALIDATION",
            Error::Dimension(_) => "E_DIMENSION",
            Error::Training { .. } => "E_TRAINING",
            Error::Config(_) => "E_CONFIG",
            Error::Overflow { .. } => "E_OVERFLOW",
            Error::Format(_) => "E_FORMAT",
            Error::Io(_) => "E_IO",
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
