use thiserror::Error;

/// Errors surfaced by the codec, transforms and model-inference layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("bit budget {requested} bits is below the stream minimum of {minimum} bits")]
    BudgetTooSmall { requested: u64, minimum: u64 },

    #[error("malformed bitstream in section `{section}`: {detail}")]
    Bitstream {
        section: &'static str,
        detail: String,
    },

    #[error("unsupported wav file: {0}")]
    Wav(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn stream(section: &'static str, detail: impl Into<String>) -> Self {
        Error::Bitstream {
            section,
            detail: detail.into(),
        }
    }
}
