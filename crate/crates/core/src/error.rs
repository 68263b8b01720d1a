use thiserror::Error;

#[derive(Debug, Error)]
pub enum KmpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("event budget exceeded: about {expected:.0} events needed, budget is {budget}")]
    BudgetExceeded { expected: f64, budget: u64 },
    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(csv::Error),
}

impl From<csv::Error> for KmpError {
    fn from(e: csv::Error) -> Self {
        if !e.is_io_error() {
            return KmpError::Csv(e);
        }
        match e.into_kind() {
            csv::ErrorKind::Io(io) => KmpError::Io(io),
            _ => unreachable!("is_io_error checked"),
        }
    }
}

pub type Result<T> = std::result::Result<T, KmpError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(KmpError::InvalidParameter(msg.into()))
}
