//! Seeded random matrices shared by the trainer, the gradient checks and
//! the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{mat_inv_sqrt, sym_eig, Matrix};
use crate::metalayer::covariance;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Matrix with i.i.d. standard normal entries.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| standard_normal(rng))
}

/// Orthogonal matrix from the eigenvectors of a random symmetric matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    let b = gaussian_matrix(rng, n, n);
    let sym = (&b + &b.transpose()).scale(0.5);
    let u = sym_eig(&sym).expect("jacobi converges on small gaussian input").u;
    // Random column signs so the sign convention does not bias the draw.
    let signs: Vec<f64> = (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    u.scale_columns(&signs)
}

/// SPD matrix `Q diag(λ) Qᵀ` with eigenvalues log-uniform in `[1/kappa, 1]`,
/// the extremes included so the condition number is exactly `kappa`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, kappa: f64) -> Matrix {
    let q = random_orthogonal(rng, n);
    let lambdas: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => 1.0,
            1 => 1.0 / kappa,
            _ => kappa.powf(-rng.random::<f64>()),
        })
        .collect();
    let p = q.scale_columns(&lambdas).matmul_t(&q).expect("square");
    p.symmetrize()
}

/// Matrix with prescribed singular values and random singular vectors.
pub fn with_singular_values<R: Rng + ?Sized>(rng: &mut R, sigmas: &[f64]) -> Matrix {
    let n = sigmas.len();
    let u = random_orthogonal(rng, n);
    let v = random_orthogonal(rng, n);
    u.scale_columns(sigmas).matmul_t(&v).expect("square")
}

/// `d × n` features whose covariance has exactly the eigenvalues `lambdas`
/// (up to rounding), with a non-zero mean. Needs `n > d`.
pub fn features_with_spectrum<R: Rng + ?Sized>(rng: &mut R, lambdas: &[f64], n: usize) -> Matrix {
    let d = lambdas.len();
    let z = gaussian_matrix(rng, d, n);
    let (pz, _) = covariance(&z).expect("at least two samples");
    let white = &mat_inv_sqrt(&pz, 0.0).expect("full-rank gaussian draw") * &z.center_rows();
    let q = random_orthogonal(rng, d);
    let roots: Vec<f64> = lambdas.iter().map(|l| l.sqrt()).collect();
    let mut x = &q.scale_columns(&roots) * &white;
    for i in 0..d {
        for j in 0..n {
            x[(i, j)] += 0.3 * (i as f64 + 1.0);
        }
    }
    x
}
