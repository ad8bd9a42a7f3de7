use thiserror::Error;

/// Errors produced by the fxam library.
#[derive(Debug, Error)]
pub enum FxamError {
    #[error("empty series")]
    EmptySeries,

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: {what} has length {found}, expected {expected}")]
    LengthMismatch {
        what: String,
        found: usize,
        expected: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("period must be greater than 1, got {0}")]
    InvalidPeriod(usize),

    #[error("time {time} is not a multiple of tau = {tau}")]
    NotDivisible { time: i64, tau: i64 },

    #[error("test-support only: dimension {dim} exceeds bound {bound}")]
    TestSupportOnly { dim: usize, bound: usize },

    #[error("no categorical features")]
    NoCategorical,

    #[error("zero matrix has no dominant eigenvalue")]
    ZeroMatrix,

    #[error("singular system")]
    Singular,

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("training diverged: objective became non-finite at cycle {cycle}")]
    Diverged { cycle: usize },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("unsupported model version `{found}` (expected `{expected}`)")]
    Version { found: String, expected: String },

    #[error("malformed model: {0}")]
    Malformed(String),

    #[error("unknown configuration `{0}`")]
    UnknownConfig(String),

    #[error("inconsistent configuration: {0}")]
    InconsistentConfig(String),
}

pub type Result<T> = std::result::Result<T, FxamError>;
