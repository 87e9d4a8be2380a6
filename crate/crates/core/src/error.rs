use thiserror::Error;

pub type Result<T, E = DrkmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DrkmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("input gradient is not implemented for the {0} kernel")]
    UnsupportedGradient(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure in {term}: {detail}")]
    Numerical { term: String, detail: String },

    #[error(
        "kernel smoother underflow: sum of weights {sum:e} is below {floor:e}; \
         increase the smoother bandwidth"
    )]
    SmootherUnderflow { sum: f64, floor: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DrkmError {
    pub(crate) fn numerical(term: impl Into<String>, detail: impl Into<String>) -> Self {
        DrkmError::Numerical {
            term: term.into(),
            detail: detail.into(),
        }
    }
}
