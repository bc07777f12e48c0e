use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A non-finite value appeared while integrating; `step` is the solver
    /// step index at which it was detected (if known).
    #[error("non-finite value at solver step {step:?}: {detail}")]
    Numerics { step: Option<usize>, detail: String },
    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a solver step index to a numerics error that lacks one.
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::Numerics { step: None, detail } => Error::Numerics {
                step: Some(step),
                detail,
            },
            other => other,
        }
    }
}
