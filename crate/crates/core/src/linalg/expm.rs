use super::{LinalgError, Matrix};

/// Degree of the truncated Taylor series evaluated after scaling.
pub const TAYLOR_DEGREE: usize = 18;

/// Number of squarings `s = max(0, ⌈log₂‖A‖_F⌉ + 1)`.
pub fn scaling_squarings(a: &Matrix) -> u32 {
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return 0;
    }
    let s = norm.log2().ceil() + 1.0;
    if s <= 0.0 {
        0
    } else {
        s as u32
    }
}

/// Horner stages `H_k` for k = 0..=TAYLOR_DEGREE with `H_18 = I` and
/// `H_{k-1} = I + B H_k / k`, so `H_0` is the Taylor polynomial of `exp(B)`.
fn taylor_stages(b: &Matrix) -> Vec<Matrix> {
    let n = b.rows();
    let eye = Matrix::identity(n);
    let mut stages = vec![eye.clone(); TAYLOR_DEGREE + 1];
    for k in (1..=TAYLOR_DEGREE).rev() {
        let mut next = (b * &stages[k]).scale(1.0 / k as f64);
        next.axpy(1.0, &eye);
        stages[k - 1] = next;
    }
    stages
}

/// Matrix exponential by scaling and squaring with a degree-18 Taylor
/// polynomial.
pub fn mat_exp(a: &Matrix) -> Result<Matrix, LinalgError> {
    a.ensure_square()?;
    a.ensure_finite()?;
    let s = scaling_squarings(a);
    let b = a.scale(0.5_f64.powi(s as i32));
    let mut e = taylor_stages(&b).swap_remove(0);
    for _ in 0..s {
        e = &e * &e;
    }
    Ok(e)
}

/// Adjoint of the derivative of [`mat_exp`] at `a`, applied to `grad`:
/// returns `∂⟨grad, mat_exp(a)⟩_F / ∂a`.
///
/// This is reverse-mode differentiation of the exact computation in
/// `mat_exp` (same squaring count, same Taylor degree), so it is the
/// gradient of the computed function, not of an idealized exponential.
pub fn mat_exp_adjoint(a: &Matrix, grad: &Matrix) -> Result<Matrix, LinalgError> {
    a.ensure_square()?;
    a.ensure_finite()?;
    grad.ensure_finite()?;
    if grad.shape() != a.shape() {
        return Err(LinalgError::DimensionMismatch {
            op: "mat_exp_adjoint",
            left: a.shape(),
            right: grad.shape(),
        });
    }
    let s = scaling_squarings(a);
    let scale = 0.5_f64.powi(s as i32);
    let b = a.scale(scale);
    let stages = taylor_stages(&b);

    // Forward squarings E_0 = H_0, E_k = E_{k-1}².
    let mut squares = Vec::with_capacity(s as usize + 1);
    squares.push(stages[0].clone());
    for k in 0..s as usize {
        let prev = &squares[k];
        squares.push(prev * prev);
    }

    // Back through the squarings: Ḡ_{k-1} = Ḡ_k E_{k-1}ᵀ + E_{k-1}ᵀ Ḡ_k.
    let mut g = grad.clone();
    for k in (1..=s as usize).rev() {
        let e = &squares[k - 1];
        let mut next = g.matmul_t(e)?;
        next.axpy(1.0, &e.t_matmul(&g)?);
        g = next;
    }

    // Back through Horner: H_{k-1} = I + B H_k / k.
    let bt = b.transpose();
    let mut db = Matrix::zeros(a.rows(), a.cols());
    for k in 1..=TAYLOR_DEGREE {
        let inv_k = 1.0 / k as f64;
        db.axpy(inv_k, &g.matmul_t(&stages[k])?);
        g = (&bt * &g).scale(inv_k);
    }
    Ok(db.scale(scale))
}
