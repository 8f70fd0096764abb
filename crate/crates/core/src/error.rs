//! Crate-wide error type.

use alloc::string::String;

/// Single error type for the whole crate.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("edge recovery failed for segment ({x0},{y0})-({x1},{y1}) after {splits} splits")]
    EdgeRecovery {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        splits: usize,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("field does not belong to this mesh")]
    MeshMismatch,

    #[error("linear solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverFailure { residual: f64, iterations: usize },

    #[error("Gram system ill-conditioned (estimate {estimate:.3e}); use larger center spacing or fewer centers")]
    IllConditioned { estimate: f64 },

    #[error("duplicate kernel centers")]
    DuplicateCenters,

    #[error("deformed mesh invalid; use a smaller step t")]
    DeformedMeshInvalid,

    #[error("configuration error: {0}")]
    Config(String),
}
