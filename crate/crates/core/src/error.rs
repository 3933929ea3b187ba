use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{origin}:{line}: {message}")]
    Parse { origin: String, line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("seed word `{0}` is missing from the embedding table")]
    MissingSeed(String),

    #[error("word `{0}` cannot be resolved under the table's OOV policy")]
    Unresolvable(String),

    #[error("{what} is out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("n-gram scoring needs both classes (positives: {positives}, negatives: {negatives})")]
    MissingClass { positives: usize, negatives: usize },

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error(transparent)]
    Annotation(#[from] AnnotationError),

    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn parse(origin: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::parse("json", e.line(), e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrainError {
    #[error("no example carries a positive loss weight")]
    NoSupervision,
    #[error("training data holds a single class (positives: {positives}, negatives: {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("input vectors have dimension {found}, model expects {expected}")]
    InputDimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("volunteer `{0}` has reached the tranche quota")]
    QuotaReached(String),
    #[error("no unresolved segments are left for volunteer `{0}`")]
    PoolExhausted(String),
    #[error("unknown tranche `{0}`")]
    UnknownTranche(String),
    #[error("tranche `{0}` was already submitted")]
    DuplicateSubmission(String),
    #[error("expected {expected} answers, got {found}")]
    AnswerCount { expected: usize, found: usize },
    #[error("the qualifier bank is empty")]
    NoQualifiers,
}
