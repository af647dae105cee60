use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (bad matrix, bad counts, bad flags).
    #[error("validation error: {0}")]
    Validation(String),

    /// A linear system that should determine a unique answer is (numerically)
    /// rank deficient, e.g. a transition matrix with multiple recurrent classes.
    #[error("singular system: {0}")]
    Singular(String),

    /// An argument is outside the domain of the requested operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is well posed but not implemented for these inputs
    /// (e.g. closed forms beyond four observed alleles).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The mutation model violates a structural precondition of the
    /// requested computation (irreducibility, reversibility).
    #[error("model error: {0}")]
    Model(String),

    /// The iterative solver failed to reach its residual target.
    #[error("solver error: level {level} did not converge after {sweeps} sweeps (residual {residual:.3e}, target {target:.3e})")]
    Solver {
        level: u32,
        sweeps: usize,
        residual: f64,
        target: f64,
    },

    /// The requested computation would exceed the configured memory budget.
    #[error("resource error: {0}")]
    Resource(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
