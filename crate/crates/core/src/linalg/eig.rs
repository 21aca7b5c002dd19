use super::{LinalgError, Matrix};

/// Sweep budget of the cyclic Jacobi solver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Converged once the off-diagonal Frobenius mass drops below this
/// fraction of `‖A‖_F`.
const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Asymmetry accepted on input, relative to `‖A‖_F`.
const SYMMETRY_TOL: f64 = 1e-8;
/// Negative eigenvalues within this fraction of the spectral radius are
/// round-off on a PSD input and get clamped to zero.
const PSD_CLAMP: f64 = 1e-10;

/// Eigendecomposition `A = U diag(λ) Uᵀ` of a symmetric matrix, eigenvalues
/// sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFactorization {
    pub u: Matrix,
    pub lambdas: Vec<f64>,
}

impl SpectralFactorization {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// `U f(Λ) Uᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let scaled: Vec<f64> = self.lambdas.iter().map(|&l| f(l)).collect();
        self.u
            .scale_columns(&scaled)
            .matmul_t(&self.u)
            .expect("factor shapes always conform")
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(|l| l)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first. Eigenvalues come back in
/// non-increasing order (stable with respect to the solver's output order on
/// ties), and each eigenvector column is signed so that its largest-magnitude
/// entry is positive.
pub fn sym_eig(a: &Matrix) -> Result<SpectralFactorization, LinalgError> {
    a.ensure_square()?;
    a.ensure_finite()?;
    let norm = a.frobenius_norm();
    if a.asymmetry() > SYMMETRY_TOL * norm {
        return Err(LinalgError::Domain(format!(
            "matrix is not symmetric (‖A−Aᵀ‖_F = {:e}, ‖A‖_F = {:e})",
            a.asymmetry(),
            norm
        )));
    }

    let n = a.rows();
    let mut work = a.symmetrize();
    let mut vecs = Matrix::identity(n);
    let tol = OFF_DIAGONAL_TOL * norm;

    let mut converged = false;
    let mut residual = off_diagonal_norm(&work);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if residual <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut work, &mut vecs, p, q);
            }
        }
        residual = off_diagonal_norm(&work);
    }
    if !converged && residual > tol {
        return Err(LinalgError::NoConvergence {
            solver: "jacobi eigensolver",
            iterations: JACOBI_MAX_SWEEPS,
            residual,
        });
    }

    let raw: Vec<f64> = work.diag();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the solver order on exact ties.
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));

    let radius = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut lambdas = Vec::with_capacity(n);
    let mut u = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut l = raw[src];
        if l < 0.0 && l >= -PSD_CLAMP * radius {
            l = 0.0;
        }
        lambdas.push(l);
        let mut col = vecs.column(src);
        canonicalize_sign(&mut col);
        u.set_column(dst, &col);
    }
    Ok(SpectralFactorization { u, lambdas })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        sign / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.rows();

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Flips `col` so that its largest-magnitude entry (first one on ties) is
/// positive. Returns whether a flip happened.
pub(crate) fn canonicalize_sign(col: &mut [f64]) -> bool {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        for v in col.iter_mut() {
            *v = -*v;
        }
        true
    } else {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{gaussian_matrix as random_matrix, seeded_rng as rng};
    use proptest::prelude::*;

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let f = sym_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(f.lambdas, vec![1.0, 1.0, 1.0]);
        assert!(f.u.orthogonality_residual() < 1e-14);
    }

    #[test]
    fn diagonal_input_keeps_axes() {
        let f = sym_eig(&Matrix::from_diag(&[4.0, 1.0])).unwrap();
        assert_eq!(f.lambdas, vec![4.0, 1.0]);
        assert_eq!(f.u, Matrix::identity(2));
        // Ascending diagonal gets reordered.
        let f = sym_eig(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(f.lambdas, vec![4.0, 1.0]);
        assert_eq!(f.u, Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn two_by_two_against_characteristic_polynomial() {
        // λ² − 4λ + 3 = 0 → λ = 3, 1; eigenvectors (1,1)/√2 and (1,−1)/√2.
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let f = sym_eig(&a).unwrap();
        assert!((f.lambdas[0] - 3.0).abs() < 1e-14);
        assert!((f.lambdas[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = f.u.column(0);
        let v1 = f.u.column(1);
        assert!((v0[0] - h).abs() < 1e-14 && (v0[1] - h).abs() < 1e-14);
        // Sign convention: largest-magnitude entry positive (first on ties).
        assert!((v1[0] - h).abs() < 1e-14 && (v1[1] + h).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            sym_eig(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(sym_eig(&a), Err(LinalgError::Domain(_))));
        let mut nan = Matrix::identity(2);
        nan[(0, 1)] = f64::NAN;
        assert_eq!(sym_eig(&nan), Err(LinalgError::NonFinite));
    }

    #[test]
    fn rank_deficient_psd_is_clamped() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let f = sym_eig(&a).unwrap();
        assert_eq!(f.lambdas[1], 0.0);
        assert!((f.lambdas[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix() {
        let f = sym_eig(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(f.lambdas, vec![0.0; 3]);
    }

    #[test]
    fn deterministic_output() {
        let mut r = rng(11);
        let b = random_matrix(&mut r, 9, 9);
        let a = b.matmul_t(&b).unwrap();
        assert_eq!(sym_eig(&a).unwrap(), sym_eig(&a).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reconstruction_and_orthogonality(seed in any::<u64>(), d in 1usize..=32) {
            let mut r = rng(seed);
            let b = random_matrix(&mut r, d, d);
            let a = (&b + &b.transpose()).scale(0.5);
            let f = sym_eig(&a).unwrap();
            prop_assert!(rel_err(&f.reconstruct(), &a) <= 1e-8 + 1e-300);
            prop_assert!(f.u.transpose().orthogonality_residual() <= 1e-10 * d as f64);
            for w in f.lambdas.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }
    }
}
