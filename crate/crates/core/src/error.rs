use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Error, Debug)]
pub enum Error {
    /// Shapes that should line up do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A knob was set to a value the implementation cannot honor.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input violates a mathematical precondition (asymmetry, negativity, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Computation produced or detected non-finite values, or failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed external data (CSV, checkpoint, config file).
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
