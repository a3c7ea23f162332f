use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes. The CLI maps each one to a distinct exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    MissingInput,
    Format,
    Degenerate,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt payload at byte {offset}: {message}")]
    Corruption { offset: u64, message: String },

    #[error("inconsistent bundle: {0}")]
    Consistency(String),

    #[error("invalid trace `{token_id}`: {reason}")]
    InvalidTrace { token_id: String, reason: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("zero-norm {which} embedding")]
    DegenerateEmbedding { which: EmbeddingRef },

    #[error("layer {layer_index}: {source}")]
    Layer {
        layer_index: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("token `{token_id}`: {source}")]
    Token {
        token_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("labeled tokens missing from bundle: {}", .0.join(", "))]
    MissingTokens(Vec<String>),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("non-finite feature value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("feature layout mismatch (missing: [{}], extra: [{}])", .missing.join(", "), .extra.join(", "))]
    LayoutMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("infeasible split: {0}")]
    Infeasible(String),

    #[error("undefined AUC: scores contain only one class")]
    UndefinedAuc,

    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which embedding vector was degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingRef {
    Token,
    Patch(usize),
}

impl std::fmt::Display for EmbeddingRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbeddingRef::Token => write!(f, "token"),
            EmbeddingRef::Patch(p) => write!(f, "patch {p}"),
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, layer_index: u32) -> Self {
        Error::Layer {
            layer_index,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_token(self, token_id: &str) -> Self {
        Error::Token {
            token_id: token_id.to_string(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorKind::MissingInput
            }
            Error::Io { .. } => ErrorKind::Internal,
            Error::MissingTokens(_) => ErrorKind::MissingInput,
            Error::Format(_)
            | Error::Corruption { .. }
            | Error::Consistency(_)
            | Error::InvalidTrace { .. }
            | Error::Parse { .. }
            | Error::Version { .. }
            | Error::LayoutMismatch { .. }
            | Error::Json(_) => ErrorKind::Format,
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::DegenerateInput(_)
            | Error::DegenerateEmbedding { .. }
            | Error::SingleClass
            | Error::NonFinite { .. }
            | Error::Infeasible(_)
            | Error::UndefinedAuc => ErrorKind::Degenerate,
            Error::Layer { source, .. } | Error::Token { source, .. } => source.kind(),
        }
    }

    /// Short stable identifier used in machine-readable diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "not_found",
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Corruption { .. } => "corruption",
            Error::Consistency(_) => "consistency",
            Error::InvalidTrace { .. } => "invalid_trace",
            Error::Parse { .. } => "parse",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::DegenerateEmbedding { .. } => "degenerate_embedding",
            Error::Layer { source, .. } | Error::Token { source, .. } => source.code(),
            Error::MissingTokens(_) => "missing_tokens",
            Error::SingleClass => "single_class",
            Error::NonFinite { .. } => "non_finite",
            Error::LayoutMismatch { .. } => "layout_mismatch",
            Error::Infeasible(_) => "infeasible",
            Error::UndefinedAuc => "undefined_auc",
            Error::Version { .. } => "version",
            Error::Json(_) => "json",
        }
    }
}
