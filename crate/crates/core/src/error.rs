use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector norm {norm:e} is below the zero-norm threshold")]
    ZeroNorm { norm: f64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("empty vector")]
    EmptyVector,

    #[error("similarity score {value} at index {index} is outside [-1, 1]")]
    ScoreOutOfRange { index: usize, value: f64 },

    #[error("state list is empty")]
    EmptyStateList,

    #[error("every aggregation weight is zero")]
    AllWeightsZero,

    #[error("class name is empty")]
    EmptyClassName,

    #[error("generation client unavailable: {0}")]
    ClientUnavailable(String),

    #[error("class '{class}': got {got} {what} descriptions, wanted {wanted}")]
    InsufficientDescriptions {
        class: String,
        what: &'static str,
        got: usize,
        wanted: usize,
    },

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("invalid description set for '{class}': {reason}")]
    InvalidDescriptions { class: String, reason: String },

    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),

    #[error("empty text cannot be encoded")]
    EmptyText,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("label {label} out of range for vocabulary of {vocab}")]
    LabelOutOfRange { label: usize, vocab: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("world spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("sample is not a weak image")]
    NotWeakImage,

    #[error("weak image has no proposals")]
    EmptyProposals,

    #[error("training diverged at step {step}: total loss {total}")]
    DivergenceDetected { step: usize, total: f64 },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConfig(_) | SpecInfeasible(_) => ErrorClass::Config,
            ZeroNorm { .. }
            | NonFinite { .. }
            | AllWeightsZero
            | DivergenceDetected { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
