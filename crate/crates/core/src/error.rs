use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Extents that do not line up (operand shapes, stage grids, file headers).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value violates a precondition.
    #[error("config error: {0}")]
    Config(String),

    /// A value left the finite range, or a series failed to converge.
    #[error("numeric error in `{op}`: {detail}")]
    Numeric { op: String, detail: String },

    /// Misuse of an API (e.g. backward on a non-scalar).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed binary file.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Dataset content that cannot be processed (too few samples, empty confusion, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Dimension(_)
            | Error::Format { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::Numeric { .. } => 4,
        }
    }
}
