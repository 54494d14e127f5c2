use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Validation,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate chain: no unique stationary distribution")]
    DegenerateChain,

    #[error("unknown elevation angle {0} deg: not in the built-in table")]
    UnknownAngle(u32),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("loss is not a scalar recorded on this tape")]
    LossNotOnTape,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty column: cannot build an empirical distribution")]
    EmptyColumn,

    #[error("support mismatch between distributions")]
    SupportMismatch,

    #[error("KL undefined: zero-probability mismatch")]
    KlUndefined,

    #[error("column mismatch: real has [{real}], synthetic has [{synthetic}]")]
    ColumnMismatch { real: String, synthetic: String },

    #[error("repetition {index}: {source}")]
    Repetition {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid state value at row {row}, column {column}")]
    InvalidState { row: usize, column: usize },

    #[error("ragged row {row}: expected {expected} cells, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate angle column {0}")]
    DuplicateAngle(u32),

    #[error("bad header column {0:?}: expected angle_<deg>")]
    BadHeader(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("unrecognized model file")]
    UnrecognizedModelFile,

    #[error("model file format version {found} is not supported (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated model file: {0}")]
    TruncatedModelFile(String),

    #[error("unknown model family {0:?}")]
    UnknownFamily(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) => ErrorClass::Usage,
            Error::InvalidState { .. }
            | Error::RaggedRow { .. }
            | Error::DuplicateAngle(_)
            | Error::BadHeader(_)
            | Error::Malformed { .. }
            | Error::UnrecognizedModelFile
            | Error::UnsupportedVersion { .. }
            | Error::TruncatedModelFile(_)
            | Error::UnknownFamily(_)
            | Error::UnknownAngle(_)
            | Error::ColumnMismatch { .. }
            | Error::EmptyDataset
            | Error::EmptyColumn => ErrorClass::Validation,
            Error::Repetition { source, .. } | Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Runtime,
        }
    }
}
