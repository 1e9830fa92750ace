use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("composite Hilbert space dimension {dim} exceeds the limit of {limit}")]
    DimensionOverflow { dim: usize, limit: usize },

    #[error("matrix is not Hermitian (deviation {deviation:.3e}, tolerance {tolerance:.3e})")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("species `{0}` has no allowed transitions")]
    NoTransitions(String),

    #[error("quadrature did not converge: estimate {estimate:.6e}, achieved error {achieved:.3e}")]
    Quadrature { estimate: f64, achieved: f64 },

    #[error("time step {dt:.3e} s violates the stability bound {bound:.3e} s ({reason})")]
    Stability { dt: f64, bound: f64, reason: &'static str },

    #[error("non-finite value in {field} at node {node} (t = {time:.6e} s)")]
    NonFinite { field: String, node: usize, time: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
