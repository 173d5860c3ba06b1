use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("atom `{0}` is not in the vocabulary")]
    UnseenAtom(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("polytope is empty")]
    InfeasiblePolytope,
    #[error("slack value {value} of row {row} is neither 0 nor 1")]
    NumericalAmbiguity { row: usize, value: f64 },
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex cycled")]
    CycleDetected,
    #[error("branch and bound exceeded the node cap of {0}")]
    BudgetExceeded(usize),
    #[error("training data admits no consistent mapping")]
    InconsistentData,
    #[error("noise budget is not supported by the {0} relaxation")]
    NoiseUnsupportedInRelaxation(&'static str),
    #[error("enumeration box has {0} points, above the limit")]
    SearchSpaceTooLarge(f64),
    #[error("reconstruction search exceeded {0} partial trees")]
    SearchBudgetExceeded(usize),
    #[error("input {0} is not in the safe set")]
    NotSafe(usize),
    #[error("no (mapping, selection) pair fits the candidate outputs")]
    InfeasibleData,
    #[error("this operation requires a decider in {0} mode")]
    WrongMode(&'static str),
    #[error("malformed logical form: {0}")]
    ParseLogicalForm(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
