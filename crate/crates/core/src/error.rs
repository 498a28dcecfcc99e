use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid class label at line {line}")]
    InvalidLabel { line: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("extension item {item} is below the node tail {tail}")]
    EnumerationOrder { item: u32, tail: u32 },

    #[error("constraint maximum must be non-negative, got {0}")]
    NegativeConstraintMax(f64),

    #[error("infeasible dual point or broken primal evaluation (gap = {0:e})")]
    NegativeGap(f64),

    #[error("negative radicand {0:e} in upper bound")]
    NegativeRadicand(f64),

    #[error("λ_max = 0; path undefined")]
    DegenerateResponse,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pattern count exceeds the oracle cap of {cap}; use a smaller maxpat or fewer items")]
    CapExceeded { cap: usize },

    #[error("solver did not converge at λ = {lambda:e} (gap {gap:e} after {epochs} epochs)")]
    SolverAbort { lambda: f64, gap: f64, epochs: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the input data rather than a numerical failure.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::SolverAbort { .. })
    }
}
