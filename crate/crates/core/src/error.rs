use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index must be at least 1; the constant function is not in the basis")]
    ZeroBasisIndex,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite drift value at step {step} (x = {x})")]
    NonFiniteDrift { step: usize, x: f64 },

    #[error("truncation level J = {j} exceeds 10·T = {limit}")]
    TruncationTooLarge { j: usize, limit: f64 },

    #[error("precision matrix not positive definite after jitter escalation (last jitter {jitter:e})")]
    Singular { jitter: f64 },

    #[error("empty hyperparameter grid: {0}")]
    EmptyGrid(String),

    #[error("every grid point failed to evaluate")]
    NoSurvivingPoints,

    #[error("small-ball probability not resolvable: zero Monte Carlo hits at radius {radius} with {samples} samples")]
    Unresolvable { radius: f64, samples: usize },

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
