use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A time or argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A noise schedule violates α(0) = 1, positivity or monotonicity.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// Numerical breakdown at a specific time (overflow, singular factor, lost symmetry).
    #[error("numerical error at t = {time}: {reason}")]
    Numerical { time: f64, reason: String },

    /// An operation was called on inputs that break its contract
    /// (e.g. the DDIM closed form on a non-DDIM process).
    #[error("contract violated: {0}")]
    Contract(String),

    /// Covariance is singular where an inverse is required (typically t = 0).
    #[error("singular covariance at t = {0}")]
    SingularCovariance(f64),

    /// The vectorised Sylvester operator X ↦ fX + Xfᵀ is singular.
    #[error("singular Sylvester operator: eigenvalues {first} and {second} of f sum to {sum:.3e}")]
    SingularSylvester { first: String, second: String, sum: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerical(time: f64, reason: impl Into<String>) -> Self {
        Error::Numerical { time, reason: reason.into() }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
