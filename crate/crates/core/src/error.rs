use std::path::PathBuf;

/// Crate error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm input: {0}")]
    ZeroNorm(&'static str),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model mismatch: blob was coded with model {blob}, decoder has {model}")]
    ModelMismatch { blob: String, model: String },

    #[error("truncated input at byte offset {offset}")]
    Truncated { offset: usize },

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown method `{name}` (valid: {valid})")]
    UnknownMethod { name: String, valid: String },

    #[error("query {0} has no positives among the references")]
    NoPositives(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short name, used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension",
            Error::ZeroNorm(_) => "zero-norm",
            Error::NonFinite(_) => "non-finite",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ModelMismatch { .. } => "model-mismatch",
            Error::Truncated { .. } => "truncated",
            Error::Corrupt(_) => "corrupt",
            Error::Parse { .. } => "parse",
            Error::UnknownMethod { .. } => "unknown-method",
            Error::NoPositives(_) => "no-positives",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for this error. 1 and 2 are reserved for
    /// unexpected failures and argument parsing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Parse { .. } => 4,
            Error::InvalidArgument(_) | Error::UnknownMethod { .. } => 5,
            Error::DimensionMismatch { .. } | Error::ZeroNorm(_) | Error::NonFinite(_) => 6,
            Error::ModelMismatch { .. } | Error::Truncated { .. } | Error::Corrupt(_) => 7,
            Error::NoPositives(_) => 8,
        }
    }
}
