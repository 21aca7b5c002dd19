//! Dense real matrix kernels.
//!
//! Everything here is a pure function of its inputs. The symmetric
//! eigensolver is a cyclic Jacobi method and the SVD is a one-sided
//! (Hestenes) Jacobi method, so the crate carries no LAPACK dependency.

mod eig;
mod expm;
mod matrix;
mod spectral;
mod svd;

use thiserror::Error;

pub use eig::{sym_eig, SpectralFactorization, JACOBI_MAX_SWEEPS};
pub use expm::{mat_exp, mat_exp_adjoint, scaling_squarings, TAYLOR_DEGREE};
pub use matrix::Matrix;
pub use spectral::{
    condition_number, condition_number_from_eigenvalues, mat_inv_sqrt, mat_sqrt, newton_schulz,
    NewtonSchulz,
};
pub use svd::{svd, SvdFactorization};

/// Errors raised by the dense kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix data has {got} entries, expected a non-empty {expected:?} layout")]
    Shape { expected: (usize, usize), got: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
}

impl LinalgError {
    /// True for failures of an iterative solver, the events counted as
    /// "failure times" during training.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, LinalgError::NoConvergence { .. })
    }
}
