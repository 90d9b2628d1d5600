use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("derivative of order {0} is not available (supported: 1..=4)")]
    UnsupportedOrder(usize),

    #[error("non-finite value at x = {x} (l = {ell}, j = {j})")]
    NonFinite { x: f64, ell: usize, j: usize },

    #[error("tail exponent {0} is not integrable near 0")]
    NonIntegrableTail(f64),

    #[error("densities live on different grids")]
    GridMismatch,

    #[error("point {0} lies outside (0, 1]")]
    OutOfDomain(f64),

    #[error("density value {value} at x = {x} must be {requirement}")]
    InvalidDensity {
        x: f64,
        value: f64,
        requirement: &'static str,
    },

    #[error("effective exponent {0} leaves (0, 1)")]
    ExponentOutOfRange(f64),

    #[error("fixed point iteration did not converge after {iterations} outer steps (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("need at least {needed} points for a fit, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("malformed csv at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
