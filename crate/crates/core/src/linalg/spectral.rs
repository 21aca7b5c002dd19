use super::eig::sym_eig;
use super::{LinalgError, Matrix};

/// Relative tolerance for eigenvalues that are negative only by round-off.
const NEGATIVE_TOL: f64 = 1e-10;
/// Below this the ratio `λ_min/λ_max` is reported as an infinite condition
/// number.
const SINGULAR_RATIO: f64 = 1e-300;
/// Newton–Schulz residual growth is ignored below this floor (round-off).
const NS_RESIDUAL_FLOOR: f64 = 1e-10;

fn psd_lambdas(lambdas: &[f64]) -> Result<(), LinalgError> {
    let max = lambdas.first().copied().unwrap_or(0.0);
    let min = lambdas.last().copied().unwrap_or(0.0);
    if min < -NEGATIVE_TOL * max.abs() || (min < 0.0 && max <= 0.0) {
        return Err(LinalgError::Domain(format!(
            "matrix is not positive semi-definite (λ_min = {min:e}, λ_max = {max:e})"
        )));
    }
    Ok(())
}

/// Principal square root `U Λ^{1/2} Uᵀ` of a symmetric PSD matrix.
pub fn mat_sqrt(p: &Matrix) -> Result<Matrix, LinalgError> {
    let f = sym_eig(p)?;
    psd_lambdas(&f.lambdas)?;
    Ok(f.reconstruct_with(|l| l.max(0.0).sqrt()).symmetrize())
}

/// Inverse square root `U (Λ + eps I)^{-1/2} Uᵀ`.
pub fn mat_inv_sqrt(p: &Matrix, eps: f64) -> Result<Matrix, LinalgError> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(LinalgError::Domain(format!(
            "eigenvalue floor must be finite and non-negative, got {eps}"
        )));
    }
    let f = sym_eig(p)?;
    psd_lambdas(&f.lambdas)?;
    if let Some(&min) = f.lambdas.last() {
        if min + eps <= 0.0 {
            return Err(LinalgError::Domain(format!(
                "λ_min + eps = {:e} is not positive",
                min + eps
            )));
        }
    }
    Ok(f.reconstruct_with(|l| 1.0 / (l + eps).sqrt()).symmetrize())
}

/// Result of the coupled Newton–Schulz iteration.
#[derive(Debug, Clone)]
pub struct NewtonSchulz {
    /// Approximation of `P^{1/2}`.
    pub sqrt: Matrix,
    /// Approximation of `P^{-1/2}`.
    pub inv_sqrt: Matrix,
    /// `‖I − Z_k Y_k‖_F` for k = 0..=iters.
    pub residuals: Vec<f64>,
}

/// Coupled Newton–Schulz iteration for the square root and inverse square
/// root of an SPD matrix.
///
/// With `A = P/‖P‖_F`, `Y₀ = A`, `Z₀ = I`:
/// `T = ½(3I − Z_k Y_k)`, `Y_{k+1} = Y_k T`, `Z_{k+1} = T Z_k`; the outputs
/// are rescaled by `√‖P‖_F`.
pub fn newton_schulz(p: &Matrix, iters: usize) -> Result<NewtonSchulz, LinalgError> {
    p.ensure_square()?;
    p.ensure_finite()?;
    if iters == 0 {
        return Err(LinalgError::Domain("iteration count must be positive".into()));
    }
    let norm = p.frobenius_norm();
    if norm == 0.0 {
        return Err(LinalgError::Domain("zero matrix has no inverse square root".into()));
    }
    if p.asymmetry() > 1e-8 * norm {
        return Err(LinalgError::Domain("matrix is not symmetric".into()));
    }
    let n = p.rows();
    let eye = Matrix::identity(n);
    let mut y = p.scale(1.0 / norm);
    let mut z = Matrix::identity(n);
    let mut residuals = vec![(&eye - &y).frobenius_norm()];
    let mut growth = 0;
    for _ in 0..iters {
        let zy = &z * &y;
        let t = (&eye.scale(3.0) - &zy).scale(0.5);
        y = &y * &t;
        z = &t * &z;
        let r = (&eye - &(&z * &y)).frobenius_norm();
        let prev = *residuals.last().expect("non-empty");
        if !r.is_finite() {
            growth = 2;
        } else if r > prev && r > NS_RESIDUAL_FLOOR {
            growth += 1;
        } else {
            growth = 0;
        }
        residuals.push(r);
        if growth >= 2 {
            return Err(LinalgError::NoConvergence {
                solver: "newton-schulz iteration",
                iterations: residuals.len() - 1,
                residual: r,
            });
        }
    }
    let root = norm.sqrt();
    Ok(NewtonSchulz {
        sqrt: y.scale(root),
        inv_sqrt: z.scale(1.0 / root),
        residuals,
    })
}

/// Condition number `λ_max / λ_min` from non-increasing eigenvalues of a PSD
/// matrix, `+∞` when `λ_min ≤ 1e-300 λ_max`.
pub fn condition_number_from_eigenvalues(lambdas: &[f64]) -> f64 {
    let max = lambdas.first().copied().unwrap_or(0.0);
    let min = lambdas.last().copied().unwrap_or(0.0);
    if max <= 0.0 || min <= SINGULAR_RATIO * max {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition number of a symmetric PSD matrix from its eigenvalues.
pub fn condition_number(p: &Matrix) -> Result<f64, LinalgError> {
    let f = sym_eig(p)?;
    psd_lambdas(&f.lambdas)?;
    Ok(condition_number_from_eigenvalues(&f.lambdas))
}
