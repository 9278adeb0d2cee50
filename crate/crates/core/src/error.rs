use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("shape mismatch for {path}: expected {expected} floats, found {found}")]
    ShapeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in valid region of sample {0}")]
    NonFiniteFeature(String),
    #[error("annotation for {id} outside [0, duration]: s={s} e={e} duration={duration}")]
    AnnotationOutOfRange {
        id: String,
        s: f64,
        e: f64,
        duration: f64,
    },
    #[error("no annotation for sample {0}")]
    MissingAnnotation(String),
    #[error("invalid time span: s={0} e={1}")]
    InvalidSpan(f64, f64),
    #[error("zero-vector embedding for sample {0}")]
    ZeroEmbedding(String),
    #[error("expected a clip or point annotation, got a full span")]
    FullAnnotationInPartialContext,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("all-padding input for sample {0}")]
    AllPadding(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("prediction/ground-truth id mismatch: {0}")]
    IdMismatch(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
