use thiserror::Error;

/// Errors raised by the library.
///
/// The variants map onto three exit classes used by the command line:
/// bad inputs (`Domain`, `Precondition`, `Config`, `NoData`), broken internal
/// invariants (`Logic`), and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("internal logic error: {0}")]
    Logic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by a broken internal invariant rather than by the caller.
    pub fn is_logic(&self) -> bool {
        matches!(self, Error::Logic(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
