use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum HscError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("{path}: record {record}: {message}")]
    Record {
        path: String,
        record: usize,
        message: String,
    },

    #[error("unsupported checkpoint format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("label set contains a single class ({0}); binary classifier needs both")]
    SingleClass(&'static str),

    #[error("no augmented samples to label")]
    NoAugmentedSamples,

    #[error("AUC needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClassLabels { positives: usize, negatives: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HscError> = std::result::Result<T, E>;

impl HscError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HscError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(HscError::Shape {
            context,
            expected,
            got,
        })
    }
}
