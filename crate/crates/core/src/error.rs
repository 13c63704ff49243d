use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad caller-supplied values (negative visibility, non-finite features, ...).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A malformed record in a text file. `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate key at line {line}: {key}")]
    DuplicateKey { line: u64, key: String },

    #[error("malformed container: {0}")]
    Format(String),

    #[error("unsupported format version: found {found}, expected {expected}")]
    Version { found: String, expected: String },

    #[error("interpolation error: {0}")]
    Interpolation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("feature manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("ensemble member {member} failed: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable identifier for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::Format(_) => "format",
            Error::Version { .. } => "version",
            Error::Interpolation(_) => "interpolation",
            Error::InsufficientData(_) => "insufficient_data",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Numeric(_) => "numeric",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::ManifestMismatch(_) => "manifest_mismatch",
            Error::Training(_) => "training",
            Error::Member { .. } => "member",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse { line, message: format!("{other:?}") },
        }
    }
}
