use thiserror::Error;

use crate::system::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system: {0}")]
    InvalidSystem(ValidationReport),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("point ({x}, {xi}) lies outside the triangle 0 <= xi <= x <= 1")]
    OutsideDomain { x: f64, xi: f64 },

    #[error("index out of range: {0}")]
    Index(String),

    /// Successive approximations did not reach the tolerance.
    #[error(
        "{stage} did not converge (row {row:?}): increment {last:e} above tolerance {tol:e} after {} iterations",
        history.len()
    )]
    NonConvergence {
        stage: &'static str,
        row: Option<usize>,
        tol: f64,
        last: f64,
        history: Vec<f64>,
    },

    #[error("time step {dt:e} exceeds the CFL bound {max_dt:e}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
