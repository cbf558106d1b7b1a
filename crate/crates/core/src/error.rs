use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: empty axis")]
    EmptyAxis { op: &'static str },

    #[error("backward: root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward: tape already consumed")]
    TapeConsumed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{field}: {msg}")]
    Config { field: String, msg: String },

    #[error("{0}")]
    Checkpoint(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// Short category tag used on the command line's error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. }
            | Error::EmptyAxis { .. }
            | Error::NonScalarRoot(_)
            | Error::TapeConsumed => "compute",
            Error::InvalidArgument(_) => "argument",
            Error::Parse { .. } => "data",
            Error::Config { .. } => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::MissingGrad(_) => "optimizer",
            Error::Io(_) => "io",
        }
    }
}
