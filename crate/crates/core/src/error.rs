use thiserror::Error;

/// Errors raised by the numeric, model, training, dataset and metrics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarError {
    #[error("{op}: shape mismatch, left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix dimensions must be non-zero, got {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },

    #[error("window has no time steps")]
    EmptyWindow,

    #[error("window step {step} has {got} channels, expected {expected}")]
    ChannelCount { step: usize, got: usize, expected: usize },

    #[error("window length {got} does not match configured window size {expected}")]
    WindowLength { got: usize, expected: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("label index {0} is out of range")]
    LabelOutOfRange(usize),

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("forward trace does not belong to these parameters: {0}")]
    TraceMismatch(String),

    #[error("length mismatch: {left} truth labels vs {right} predictions")]
    LengthMismatch { left: usize, right: usize },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("input set is empty: {0}")]
    EmptyInput(&'static str),

    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for HarError {
    fn from(e: std::io::Error) -> Self {
        HarError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarError>;
