use thiserror::Error;

/// Errors raised by the engine, the models and the I/O formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward root does not require grad")]
    DetachedRoot,

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("model capacity reached: {0} branches")]
    Capacity(usize),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {parts}")]
    NonFinite { epoch: usize, batch: usize, parts: String },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("model family mismatch: {0}")]
    FamilyMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        Error::ShapeMismatch { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
    }

    pub(crate) fn invalid(op: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument { op, message: message.into() }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config { field: field.to_string(), message: message.into() }
    }
}
