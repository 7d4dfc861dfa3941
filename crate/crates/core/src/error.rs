use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("every direction collapsed during orthonormalization")]
    AllDirectionsDegenerate,

    #[error("class {0} has no examples")]
    EmptyClass(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite value in embedding row {row}")]
    NonFiniteEmbedding { row: usize },

    #[error("requested {requested} INLP iterations but the embedding dimension is {dim}")]
    IterationsExceedDim { requested: usize, dim: usize },

    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sentence is empty")]
    EmptySentence,

    #[error("sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("position {0} does not hold the mask token")]
    MaskMissing(usize),

    #[error("{path}: line {line}: {message}")]
    Format { path: String, line: usize, message: String },

    #[error("word inventories overlap on {0:?}")]
    InventoryCollision(String),

    #[error("language specs are incompatible: {0}")]
    SpecMismatch(String),

    #[error("requested {requested} items but only {available} are available")]
    InsufficientData { requested: usize, available: usize },

    #[error("sentence has no dictionary-covered word")]
    NoCoveredWord,

    #[error("piece id {0} is outside the distribution")]
    UnknownPiece(usize),

    #[error("no shift records to aggregate")]
    EmptyRecords,

    #[error("MLM-top-K never reached the threshold {threshold}")]
    ThresholdNeverMet {
        threshold: f64,
        trace: Vec<crate::eval::TracePoint>,
    },

    #[error("stage {stage} failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a pipeline stage label.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
