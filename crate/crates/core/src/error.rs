use std::io;

/// Errors raised anywhere in the training runtime.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A reduction is long enough that INT32 accumulation could overflow.
    #[error("overflow risk: reduction length {len} exceeds {max}")]
    OverflowRisk { len: usize, max: usize },

    /// An exponent left the representable range or another internal invariant broke.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("translate error: {0}")]
    Translate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("run error: {0}")]
    Run(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
