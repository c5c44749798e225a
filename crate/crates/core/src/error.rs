use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("resolution {n} does not divide the fine grid size {n_fine}")]
    Divisibility { n: usize, n_fine: usize },

    #[error("resource limit: {requested} entries requested, cap is {cap}")]
    Resource { requested: usize, cap: usize },

    #[error("non-finite value on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("quadrature did not converge: achieved error {achieved:e} > tolerance {tolerance:e}")]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("value {z} outside the range [{lo}, {hi}]")]
    Range { z: f64, lo: f64, hi: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
