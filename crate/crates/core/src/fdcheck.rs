//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use crate::linalg::Matrix;

/// Default step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of the scalar function `f` at `x`.
///
/// Returns `None` if `f` fails (returns `None`) at any probe point.
pub fn central_difference(
    x: &Matrix,
    step: f64,
    mut f: impl FnMut(&Matrix) -> Option<f64>,
) -> Option<Matrix> {
    let (rows, cols) = x.shape();
    let mut grad = Matrix::zeros(rows, cols);
    let mut probe = x.clone();
    for i in 0..rows {
        for j in 0..cols {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + step;
            let plus = f(&probe)?;
            probe[(i, j)] = orig - step;
            let minus = f(&probe)?;
            probe[(i, j)] = orig;
            grad[(i, j)] = (plus - minus) / (2.0 * step);
        }
    }
    Some(grad)
}

/// `‖analytic − reference‖_F / ‖reference‖_F`, with an absolute fallback
/// when the reference vanishes.
pub fn relative_error(analytic: &Matrix, reference: &Matrix) -> f64 {
    let diff = (analytic - reference).frobenius_norm();
    let scale = reference.frobenius_norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
