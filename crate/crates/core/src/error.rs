use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A parameter combination that cannot describe a valid run.
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical result that violates a physical validity bound.
    #[error("numerical validity error: {0}")]
    Numerical(String),
    /// An internal contract was violated by the caller.
    #[error("logic error: {0}")]
    Logic(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
