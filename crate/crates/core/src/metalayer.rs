//! SVD meta-layer: sample covariance, eigendecomposition-based square root
//! or inverse square root, and the analytic gradient back to the features.
//!
//! Forward, for features `X ∈ R^{d×N}`:
//!
//! ```text
//! P = X J Xᵀ,  J = (1/N)(I − (1/N)𝟙𝟙ᵀ)
//! P = U Λ Uᵀ                       (eigenvalues non-increasing)
//! Y = U Λ^{1/2} Uᵀ  or  U (Λ + εI)^{-1/2} Uᵀ
//! ```
//!
//! Backward, given `∂l/∂Y`:
//!
//! ```text
//! ∂l/∂U = (∂l/∂Y + ∂l/∂Yᵀ) U Λ^{±1/2}
//! ∂l/∂Λ = ±½ diag(λ^{-1/2} | λ^{-3/2}) Uᵀ (∂l/∂Y) U
//! ∂l/∂P = U (Kᵀ ∘ (Uᵀ ∂l/∂U) + (∂l/∂Λ)_diag) Uᵀ,   K_ij = 1/(λ_i − λ_j)
//! ∂l/∂X = (∂l/∂P + ∂l/∂Pᵀ) X J
//! ```

use thiserror::Error;

use crate::linalg::{sym_eig, LinalgError, Matrix, SpectralFactorization};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular gradient: {0}")]
    SingularGradient(String),
    #[error("two-step covariance expansion disagrees with direct form (relative error {0:e})")]
    ExpansionMismatch(f64),
}

impl MetaError {
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, MetaError::Linalg(e) if e.is_solver_failure())
    }
}

/// Which spectral transform the layer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetaMode {
    /// Matrix square root, the global covariance pooling output.
    Sqrt,
    /// Inverse square root, the whitening matrix of decorrelated BN.
    InvSqrt,
}

/// Forward-pass state needed by [`meta_backward`].
#[derive(Debug, Clone)]
pub struct MetaLayerCache {
    pub x: Matrix,
    pub j: Matrix,
    pub p: Matrix,
    pub factor: SpectralFactorization,
    pub mode: MetaMode,
    pub eps: f64,
}

impl MetaLayerCache {
    /// Eigenvalues shifted by the floor, `λ_i + ε`.
    pub fn floored_lambdas(&self) -> Vec<f64> {
        self.factor.lambdas.iter().map(|l| l + self.eps).collect()
    }
}

/// Antisymmetric matrix of regularized reciprocal eigengaps.
#[derive(Debug, Clone, PartialEq)]
pub struct KMatrix(Matrix);

impl KMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// `J = (1/N)(I − (1/N)𝟙𝟙ᵀ)`.
pub fn centering_matrix(n: usize) -> Matrix {
    let nf = n as f64;
    Matrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        (delta - 1.0 / nf) / nf
    })
}

/// Sample covariance `P = X J Xᵀ` and the centering matrix `J`.
///
/// `P` is evaluated as `(1/N) X_c X_cᵀ` with row-centered `X_c`, which is
/// algebraically identical and avoids the `N×N` product, then symmetrized.
pub fn covariance(x: &Matrix) -> Result<(Matrix, Matrix), MetaError> {
    let n = x.cols();
    if n < 2 {
        return Err(MetaError::Domain(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    x.ensure_finite()?;
    let xc = x.center_rows();
    let p = xc.matmul_t(&xc)?.scale(1.0 / n as f64).symmetrize();
    Ok((p, centering_matrix(n)))
}

/// Default eigenvalue floor `1e-5 · trace(P)/d`.
pub fn default_eps(p: &Matrix) -> f64 {
    1e-5 * p.trace().max(0.0) / p.rows() as f64
}

/// Default Tikhonov weight for [`build_k`], `1e-12 · λ_max²`.
pub fn default_reg(lambdas: &[f64]) -> f64 {
    let max = lambdas.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    1e-12 * max * max
}

/// Forward pass: covariance, eigendecomposition and spectral transform.
///
/// `eps` shifts every eigenvalue before the power is taken. With `eps = 0`
/// the outputs are exactly `P^{1/2}` and `P^{-1/2}`.
pub fn meta_forward(
    x: &Matrix,
    mode: MetaMode,
    eps: f64,
) -> Result<(Matrix, MetaLayerCache), MetaError> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(MetaError::Domain(format!(
            "eigenvalue floor must be finite and non-negative, got {eps}"
        )));
    }
    let (p, j) = covariance(x)?;
    let factor = sym_eig(&p)?;
    let min = factor.lambdas.last().copied().unwrap_or(0.0);
    let max = factor.lambdas.first().copied().unwrap_or(0.0);
    if min < -1e-10 * max.abs() {
        return Err(MetaError::Domain(format!(
            "covariance has negative eigenvalue {min:e}"
        )));
    }
    let y = match mode {
        MetaMode::Sqrt => factor.reconstruct_with(|l| (l.max(0.0) + eps).sqrt()),
        MetaMode::InvSqrt => {
            if min.max(0.0) + eps <= 0.0 {
                return Err(MetaError::Domain(
                    "inverse square root of a singular covariance needs eps > 0".into(),
                ));
            }
            factor.reconstruct_with(|l| 1.0 / (l.max(0.0) + eps).sqrt())
        }
    }
    .symmetrize();
    let cache = MetaLayerCache {
        x: x.clone(),
        j,
        p,
        factor,
        mode,
        eps,
    };
    Ok((y, cache))
}

/// Regularized eigengap reciprocals
/// `K_ij = (λ_i − λ_j) / ((λ_i − λ_j)² + reg)`, zero on the diagonal.
///
/// `reg = 0` gives the exact `1/(λ_i − λ_j)` and fails on duplicate
/// eigenvalues.
pub fn build_k(lambdas: &[f64], reg: f64) -> Result<KMatrix, MetaError> {
    if !(reg >= 0.0) || !reg.is_finite() {
        return Err(MetaError::Domain(format!(
            "regularization must be finite and non-negative, got {reg}"
        )));
    }
    let d = lambdas.len();
    let mut k = Matrix::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let gap = lambdas[i] - lambdas[j];
            let denom = gap * gap + reg;
            if denom == 0.0 {
                return Err(MetaError::SingularGradient(format!(
                    "eigenvalues {i} and {j} coincide ({:e}) and no regularization is set",
                    lambdas[i]
                )));
            }
            let v = gap / denom;
            k[(i, j)] = v;
            k[(j, i)] = -v;
        }
    }
    Ok(KMatrix(k))
}

/// Intermediate gradients of the backward pass.
#[derive(Debug, Clone)]
pub struct MetaGradients {
    pub d_u: Matrix,
    /// Full `±½ diag(·) Uᵀ ∂l/∂Y U` before the diagonal is extracted.
    pub d_lambda: Matrix,
    pub d_p: Matrix,
    /// `∂l/∂P + (∂l/∂P)ᵀ`, the symmetric factor fed to the feature gradient.
    pub d_p_sym: Matrix,
    pub d_x: Matrix,
}

/// Analytic gradient of the meta-layer with respect to its input features.
pub fn meta_backward(cache: &MetaLayerCache, dy: &Matrix, reg: f64) -> Result<Matrix, MetaError> {
    Ok(meta_backward_detailed(cache, dy, reg)?.d_x)
}

/// [`meta_backward`] exposing every intermediate gradient.
pub fn meta_backward_detailed(
    cache: &MetaLayerCache,
    dy: &Matrix,
    reg: f64,
) -> Result<MetaGradients, MetaError> {
    let d = cache.factor.dim();
    if dy.shape() != (d, d) {
        return Err(MetaError::Linalg(LinalgError::DimensionMismatch {
            op: "meta_backward",
            left: (d, d),
            right: dy.shape(),
        }));
    }
    dy.ensure_finite()?;
    let u = &cache.factor.u;
    let floored = cache.floored_lambdas();
    if floored.iter().any(|&l| l <= 0.0) {
        return Err(MetaError::SingularGradient(
            "zero eigenvalue in the spectral power derivative; set eps > 0".into(),
        ));
    }

    let dy_sym = dy + &dy.transpose();
    let (u_power, lambda_factor): (Vec<f64>, Vec<f64>) = match cache.mode {
        MetaMode::Sqrt => floored
            .iter()
            .map(|&l| (l.sqrt(), 0.5 / l.sqrt()))
            .unzip(),
        MetaMode::InvSqrt => floored
            .iter()
            .map(|&l| (1.0 / l.sqrt(), -0.5 / (l * l.sqrt())))
            .unzip(),
    };
    let d_u = (&dy_sym * u).scale_columns(&u_power);
    let d_lambda = u.t_matmul(&(dy * u))?.scale_rows(&lambda_factor);

    let k = build_k(&cache.factor.lambdas, reg)?;
    let mut inner = k.matrix().transpose().hadamard(&u.t_matmul(&d_u)?)?;
    for i in 0..d {
        inner[(i, i)] += d_lambda[(i, i)];
    }
    let d_p = (u * &inner).matmul_t(u)?;
    let d_p_sym = &d_p + &d_p.transpose();
    // X J = X_c / N.
    let n = cache.x.cols() as f64;
    let xj = cache.x.center_rows().scale(1.0 / n);
    let d_x = &d_p_sym * &xj;
    Ok(MetaGradients {
        d_u,
        d_lambda,
        d_p,
        d_p_sym,
        d_x,
    })
}

/// Covariance generated after one SGD step on the layer weight,
/// `C = (W − ηG) Y Yᵀ (W − ηG)ᵀ`.
///
/// The result is cross-checked against the four-term expansion
/// `WYYᵀWᵀ − ηGYYᵀWᵀ − ηWYYᵀGᵀ + η²GYYᵀGᵀ`; a disagreement above `1e-10`
/// relative to the magnitude of the terms is reported as an error.
pub fn two_step_covariance(
    w: &Matrix,
    g: &Matrix,
    eta: f64,
    y: &Matrix,
) -> Result<Matrix, MetaError> {
    if !w.is_square() || g.shape() != w.shape() || y.rows() != w.cols() {
        return Err(MetaError::Linalg(LinalgError::DimensionMismatch {
            op: "two_step_covariance",
            left: w.shape(),
            right: if g.shape() != w.shape() {
                g.shape()
            } else {
                y.shape()
            },
        }));
    }
    let direct = {
        let mut updated = w.clone();
        updated.axpy(-eta, g);
        let z = &updated * y;
        z.matmul_t(&z)?
    };
    let (c, scale) = two_step_expansion(w, g, eta, y)?;
    let err = (&direct - &c).frobenius_norm();
    if err > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(MetaError::ExpansionMismatch(err / scale));
    }
    Ok(direct)
}

/// Four-term expansion of the two-step covariance and the sum of the term
/// norms.
pub fn two_step_expansion(
    w: &Matrix,
    g: &Matrix,
    eta: f64,
    y: &Matrix,
) -> Result<(Matrix, f64), MetaError> {
    let yyt = y.matmul_t(y)?;
    let t1 = (w * &yyt).matmul_t(w)?;
    let t2 = (g * &yyt).matmul_t(w)?.scale(eta);
    let t3 = (w * &yyt).matmul_t(g)?.scale(eta);
    let t4 = (g * &yyt).matmul_t(g)?.scale(eta * eta);
    let scale = t1.frobenius_norm() + t2.frobenius_norm() + t3.frobenius_norm() + t4.frobenius_norm();
    let mut c = t1;
    c.axpy(-1.0, &t2);
    c.axpy(-1.0, &t3);
    c.axpy(1.0, &t4);
    Ok((c, scale))
}
