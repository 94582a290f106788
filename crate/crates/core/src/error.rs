use std::path::PathBuf;

/// Errors produced by model construction, data ingestion and training.
#[derive(Debug, thiserror::Error)]
pub enum HmoeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("dropout rate {0} outside [0, 1]")]
    InvalidRate(f64),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("{format}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        format: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{format}: unsupported version {found} (expected {expected})")]
    BadVersion {
        format: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{format}: truncated input ({detail})")]
    Truncated { format: &'static str, detail: String },

    #[error("{format}: malformed input ({detail})")]
    Malformed { format: &'static str, detail: String },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("non-finite loss at epoch {epoch}, example {example}")]
    NonFiniteLoss { epoch: usize, example: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HmoeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HmoeError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = HmoeError> = std::result::Result<T, E>;
