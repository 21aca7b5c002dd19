//! Differentiable SVD meta-layer, orthogonality treatments for the layer
//! feeding it, and a small trainer that tracks covariance conditioning.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: dense kernels (Jacobi eigensolver and SVD, matrix
//!   exponential, exact and Newton–Schulz square roots, condition number).
//! * [`metalayer`]: covariance, spectral forward pass and its analytic
//!   backward pass.
//! * [`ortho`]: spectral normalization, orthogonal loss, orthogonal weight,
//!   nearest orthogonal gradient and the optimal learning rate.
//! * [`train`]: dense networks built around the meta-layer, SGD, and the
//!   conditioning trace.

// `!(x >= 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fdcheck;
pub mod linalg;
pub mod metalayer;
pub mod ortho;
pub mod sampling;
pub mod train;

pub use linalg::{LinalgError, Matrix};
