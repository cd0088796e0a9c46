use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid mesh, solver, or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A series was cut at the hard mode cap before reaching its tolerance.
    #[error("series truncated after {modes} modes with tail estimate {tail:e}")]
    Truncation { modes: usize, tail: f64 },

    /// Input data violates an operation precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{context}: {source}")]
    Slab {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn in_slab(self, index: usize) -> Self {
        Error::Slab {
            context: format!("time slab {index}"),
            source: Box::new(self),
        }
    }
}
