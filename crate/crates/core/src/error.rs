use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error classes surfaced by the library. The CLI maps each class onto a
/// distinct exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A non-finite value appeared; `index` is the layer, step or element
    /// where it was first observed.
    #[error("non-finite value in {context} at index {index}")]
    Numeric { context: String, index: usize },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("insufficient data: required {required} {what}, available {available}")]
    Data {
        what: String,
        required: usize,
        available: usize,
    },

    #[error("control error: {0}")]
    Control(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn numeric(context: impl Into<String>, index: usize) -> Self {
        Error::Numeric {
            context: context.into(),
            index,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::dim(context, expected, actual))
    }
}
