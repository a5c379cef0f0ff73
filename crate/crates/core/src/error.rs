use std::path::PathBuf;

use thiserror::Error;

use crate::role::RhetoricalRole;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json on line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("unknown label {label:?} in document {doc_id:?}")]
    UnknownLabel { doc_id: String, label: String },

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("document {0:?} has no sentences")]
    EmptyDocument(String),

    #[error("sentence {index} of document {doc_id:?} is unlabeled")]
    Unlabeled { doc_id: String, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing embedding for ({doc_id:?}, {index})")]
    MissingEmbedding { doc_id: String, index: usize },

    #[error("bad embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("zero variance; t is undefined")]
    ZeroVariance,

    #[error("no entry for role {0}")]
    MissingRole(RhetoricalRole),

    #[error("duplicate exemplar for role {0}")]
    DuplicateExemplar(RhetoricalRole),

    #[error("no role label found in completion {0:?}")]
    Unparseable(String),

    #[error("completion {text:?} matches several roles: {roles:?}")]
    Ambiguous {
        text: String,
        roles: Vec<RhetoricalRole>,
    },

    #[error("completion client failed on ({doc_id:?}, {index}): {message}")]
    Client {
        doc_id: String,
        index: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedLine { .. } => "malformed_line",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::DuplicateDocId(_) => "duplicate_doc_id",
            Error::EmptyDocument(_) => "empty_document",
            Error::Unlabeled { .. } => "unlabeled",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidConfig(_) => "invalid_config",
            Error::NonFinite(_) => "non_finite",
            Error::MissingEmbedding { .. } => "missing_embedding",
            Error::EmbeddingFormat(_) => "embedding_format",
            Error::Checkpoint(_) => "checkpoint",
            Error::Annotation(_) => "annotation",
            Error::ZeroVariance => "zero_variance",
            Error::MissingRole(_) => "missing_role",
            Error::DuplicateExemplar(_) => "duplicate_exemplar",
            Error::Unparseable(_) => "unparseable",
            Error::Ambiguous { .. } => "ambiguous",
            Error::Client { .. } => "client",
        }
    }
}
