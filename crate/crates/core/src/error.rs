use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("user `{user}` has {n_pos} positive and {n_neg} negative labels; both classes are required")]
    SingleClassUser {
        user: String,
        n_pos: usize,
        n_neg: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("user index {index} out of range for {n_users} users")]
    IndexOutOfRange { index: usize, n_users: usize },

    #[error("line search failed after {attempts} growths (rho = {rho:e}); the gradient is likely inconsistent with the loss")]
    LineSearchFailed { attempts: usize, rho: f64 },

    #[error("singular value decomposition did not converge")]
    SvdFailed,

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("monotonicity violated at iteration {iter}: objective rose from {before} to {after}")]
    NonMonotone { iter: usize, before: f64, after: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
