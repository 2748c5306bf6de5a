//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Errors produced by model construction, steering, analysis and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates a structural constraint.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input sequence does not fit the model context.
    #[error("capacity error: sequence of {len} positions exceeds max_seq_len {max}")]
    Capacity { len: usize, max: usize },

    /// Mismatched dimensions between two tensors or plans.
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument is outside its admissible domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// Layer sets do not partition `1..=L`.
    #[error("partition error: {0}")]
    Partition(String),

    /// Cosine similarity involving a zero vector.
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    /// Cohen's d with zero pooled variance.
    #[error("undefined effect size: {0}")]
    UndefinedEffectSize(String),

    /// A trace is missing its correctness label.
    #[error("labeling error: {0}")]
    Labeling(String),

    /// A file could not be parsed against its schema.
    #[error("ingestion error in {path}: line {line}: field `{field}`: {message}")]
    Ingestion {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    /// An identifier could not be resolved.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// A model error raised while evaluating one dataset instance.
    #[error("instance `{id}`: {source}")]
    Instance {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Ingestion,
    Numeric,
    Io,
    Usage,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Config => 2,
            ErrorKind::Ingestion => 3,
            ErrorKind::Numeric => 4,
            ErrorKind::Io => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Config => "config",
            ErrorKind::Ingestion => "ingestion",
            ErrorKind::Numeric => "numeric",
            ErrorKind::Io => "io",
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Partition(_) | Error::Lookup(_) => ErrorKind::Config,
            Error::Ingestion { .. } | Error::Labeling(_) => ErrorKind::Ingestion,
            Error::Capacity { .. }
            | Error::Shape(_)
            | Error::UndefinedSimilarity(_)
            | Error::UndefinedEffectSize(_) => ErrorKind::Numeric,
            Error::Argument(_) => ErrorKind::Usage,
            Error::Instance { source, .. } => source.kind(),
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingestion(
        path: impl AsRef<std::path::Path>,
        line: usize,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Ingestion {
            path: path.as_ref().display().to_string(),
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
