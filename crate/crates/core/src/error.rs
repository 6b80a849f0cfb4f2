use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("quadrature failed to reach tolerance: {0}")]
    Quadrature(String),

    #[error("insufficient acceptance: {accepted} accepted after {trials} trials (needed {needed})")]
    InsufficientAcceptance {
        accepted: u64,
        trials: u64,
        needed: u64,
    },

    #[error("insufficient samples: needed {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("argument {value} outside table range [{lo}, {hi}]")]
    TableRange { value: f64, lo: f64, hi: f64 },

    #[error("offspring parameter overflow: |log mean| = {0} exceeds the representable range")]
    ParameterOverflow(f64),

    #[error("population overflow: {0}")]
    PopulationOverflow(String),

    #[error("operation requires the {expected} family")]
    FamilyMismatch { expected: &'static str },

    #[error("state space too large: {0} states")]
    StateSpaceTooLarge(u64),

    #[error("degenerate abscissae for regression")]
    DegenerateAbscissae,

    #[error("empty sample")]
    EmptySample,

    #[error("Monte Carlo budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("parse error in {path:?} line {line}: {msg}")]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
