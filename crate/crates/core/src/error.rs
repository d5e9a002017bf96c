use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a directed cycle")]
    Cycle,
    #[error("sampled hard graph is cyclic; query is undefined")]
    CyclicSample,
    #[error("invalid edge knowledge: {0}")]
    InvalidKnowledge(String),
    #[error("{slots} uncertain slots exceed the enumeration cap of {cap}")]
    EnumerationCap { slots: usize, cap: usize },
    #[error("compatible graph space is empty")]
    EmptySpace,
    #[error("linear system is singular")]
    Singular,
    #[error("log-determinant domain error: det = {det}")]
    NonPositiveDet { det: f64 },
    #[error("no feasible hard sample was recorded ({attempted} attempts)")]
    NoFeasibleSample { attempted: usize },
    #[error("regression loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
