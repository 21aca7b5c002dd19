use super::eig::canonicalize_sign;
use super::matrix::dot;
use super::{LinalgError, Matrix};

const MAX_SWEEPS: usize = 100;
/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

/// Thin SVD `A = U diag(S) Vᵀ` with `r = min(m, n)` columns in `U` and `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactorization {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactorization {
    pub fn reconstruct(&self) -> Matrix {
        self.u
            .scale_columns(&self.s)
            .matmul_t(&self.v)
            .expect("factor shapes always conform")
    }

    /// Number of singular values above the rank tolerance.
    pub fn rank(&self) -> usize {
        self.s.iter().filter(|&&s| s > 0.0).count()
    }
}

/// Singular value decomposition by one-sided Jacobi rotations.
///
/// Columns of the working copy are rotated pairwise until mutually
/// orthogonal; their norms are the singular values. Singular values below
/// `1e-12 · S_max` are set to zero and the matching `U` columns are
/// completed to an orthonormal set.
pub fn svd(a: &Matrix) -> Result<SvdFactorization, LinalgError> {
    a.ensure_finite()?;
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(SvdFactorization {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let (m, n) = a.shape();

    // Column-major working storage.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = (m as f64) * f64::EPSILON;
    let mut converged = false;
    let mut worst = 0.0;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        worst = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 {
                    continue;
                }
                let scale = (alpha * beta).sqrt();
                let ratio = gamma.abs() / scale;
                if !(ratio > tol) {
                    continue;
                }
                worst = worst.max(ratio);
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            solver: "one-sided jacobi svd",
            iterations: MAX_SWEEPS,
            residual: worst,
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let s_max = order.first().map_or(0.0, |&i| norms[i]);
    let cutoff = RANK_TOL * s_max;

    let mut s = Vec::with_capacity(n);
    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        let mut vc = vcols[src].clone();
        let mut uc: Vec<f64> = if sigma > cutoff && sigma > 0.0 {
            s.push(sigma);
            cols[src].iter().map(|x| x / sigma).collect()
        } else {
            s.push(0.0);
            missing.push(dst);
            vec![0.0; m]
        };
        // Sign convention on V; U follows.
        if canonicalize_sign(&mut vc) {
            uc.iter_mut().for_each(|x| *x = -*x);
        }
        v.set_column(dst, &vc);
        u.set_column(dst, &uc);
    }
    if !missing.is_empty() {
        complete_orthonormal(&mut u, &missing);
    }
    Ok(SvdFactorization { u, s, v })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed (zero) columns of `u` with unit vectors orthogonal to
/// every other column, picking standard basis candidates by largest residual.
pub(crate) fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    let m = u.rows();
    let mut basis: Vec<Vec<f64>> = (0..u.cols())
        .filter(|j| !missing.contains(j))
        .map(|j| u.column(j))
        .collect();
    for &slot in missing {
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = -1.0;
        for k in 0..m {
            let mut cand = vec![0.0; m];
            cand[k] = 1.0;
            // Two Gram-Schmidt passes.
            for _ in 0..2 {
                for b in &basis {
                    let proj = dot(&cand, b);
                    for (c, bi) in cand.iter_mut().zip(b) {
                        *c -= proj * bi;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > best_norm + 1e-12 {
                best_norm = norm;
                best = Some(cand);
            }
        }
        let mut col = best.expect("m > 0");
        col.iter_mut().for_each(|x| *x /= best_norm);
        u.set_column(slot, &col);
        basis.push(col);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{gaussian_matrix, random_orthogonal, seeded_rng};
    use proptest::prelude::*;

    fn check_factorization(a: &Matrix, f: &SvdFactorization) {
        let rel = (&f.reconstruct() - a).frobenius_norm() / a.frobenius_norm().max(1e-300);
        assert!(rel <= 1e-8, "reconstruction error {rel:e}");
        let r = f.s.len();
        let utu = f.u.t_matmul(&f.u).unwrap();
        let vtv = f.v.t_matmul(&f.v).unwrap();
        assert!((&utu - &Matrix::identity(r)).frobenius_norm() < 1e-10);
        assert!((&vtv - &Matrix::identity(r)).frobenius_norm() < 1e-10);
        for w in f.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(f.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn orthogonal_has_unit_singular_values() {
        let q = random_orthogonal(&mut seeded_rng(3), 6);
        let f = svd(&q).unwrap();
        for s in &f.s {
            assert!((s - 1.0).abs() < 1e-13);
        }
        check_factorization(&q, &f);
    }

    #[test]
    fn diagonal_input() {
        let f = svd(&Matrix::from_diag(&[3.0, 0.5])).unwrap();
        assert_eq!(f.s, vec![3.0, 0.5]);
        assert_eq!(f.u, Matrix::identity(2));
        assert_eq!(f.v, Matrix::identity(2));
    }

    #[test]
    fn random_tall_and_wide() {
        let mut rng = seeded_rng(5);
        let a = gaussian_matrix(&mut rng, 4, 3);
        let f = svd(&a).unwrap();
        assert_eq!(f.u.shape(), (4, 3));
        assert_eq!(f.v.shape(), (3, 3));
        check_factorization(&a, &f);
        let w = a.transpose();
        let g = svd(&w).unwrap();
        assert_eq!(g.u.shape(), (3, 3));
        assert_eq!(g.v.shape(), (4, 3));
        check_factorization(&w, &g);
        for (x, y) in f.s.iter().zip(&g.s) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_keeps_zero_values() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]);
        let f = svd(&a).unwrap();
        assert!((f.s[0] - 2.0).abs() < 1e-14);
        assert_eq!(f.s[1], 0.0);
        assert_eq!(f.rank(), 1);
        check_factorization(&a, &f);
        let z = svd(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(z.s, vec![0.0; 3]);
        assert!(z.u.orthogonality_residual() < 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Matrix::identity(2);
        a[(1, 1)] = f64::INFINITY;
        assert_eq!(svd(&a), Err(LinalgError::NonFinite));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn reconstructs_random_input(seed in any::<u64>(), m in 1usize..12, n in 1usize..12) {
            let a = gaussian_matrix(&mut seeded_rng(seed), m, n);
            let f = svd(&a).unwrap();
            check_factorization(&a, &f);
        }
    }
}
