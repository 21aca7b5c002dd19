//! Orthogonality treatments for the layer that feeds the meta-layer.
//!
//! Weight treatments reparametrize or regularize the weight: spectral
//! normalization `W/σ_max(W)`, the soft loss `‖WWᵀ − I‖_F`, and the hard
//! parametrization `exp(V − Vᵀ)`. Update treatments act on the step: the
//! nearest orthogonal gradient `UVᵀ` and the optimal learning rate
//!
//! ```text
//! η* = (wᵀw · lᵀw) / (wᵀw · lᵀl + 2 (lᵀw)²)
//! ```
//!
//! used only when it is below the global learning rate.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{mat_exp, mat_exp_adjoint, mat_inv_sqrt, svd, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrthoError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("degenerate gradient: {0}")]
    DegenerateGradient(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
}

impl OrthoError {
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, OrthoError::Linalg(e) if e.is_solver_failure())
    }
}

/// Default weight of the orthogonal loss term.
pub const DEFAULT_OL_GAMMA: f64 = 0.01;
/// Residual below which the orthogonal loss is treated as zero.
const OL_MANIFOLD_TOL: f64 = 1e-12;

/// Which treatments are applied to the Pre-SVD layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthoPolicy {
    pub use_sn: bool,
    pub use_ol: bool,
    pub ol_gamma: f64,
    pub use_ow: bool,
    pub use_nog: bool,
    pub use_olr: bool,
}

impl Default for OrthoPolicy {
    fn default() -> Self {
        Self::none()
    }
}

impl OrthoPolicy {
    pub fn none() -> Self {
        Self {
            use_sn: false,
            use_ol: false,
            ol_gamma: DEFAULT_OL_GAMMA,
            use_ow: false,
            use_nog: false,
            use_olr: false,
        }
    }

    pub fn validate(&self) -> Result<(), OrthoError> {
        if self.use_sn && self.use_ow {
            return Err(OrthoError::InvalidPolicy(
                "spectral normalization and orthogonal weight both reparametrize the weight".into(),
            ));
        }
        if self.use_ol && !(self.ol_gamma >= 0.0 && self.ol_gamma.is_finite()) {
            return Err(OrthoError::InvalidPolicy(format!(
                "orthogonal loss weight must be finite and non-negative, got {}",
                self.ol_gamma
            )));
        }
        Ok(())
    }

    /// Whether the trained parameter differs from the effective weight.
    pub fn reparametrizes(&self) -> bool {
        self.use_sn || self.use_ow
    }

    /// Short name such as `none`, `ow` or `ow+nog+olr`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.use_sn, "sn"),
            (self.use_ol, "ol"),
            (self.use_ow, "ow"),
            (self.use_nog, "nog"),
            (self.use_olr, "olr"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

impl fmt::Display for OrthoPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for OrthoPolicy {
    type Err = OrthoError;

    /// Parses `none` or a `+`-separated list of `sn`, `ol`, `ow`, `nog`,
    /// `olr` (case-insensitive).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut policy = OrthoPolicy::none();
        let trimmed = s.trim().to_ascii_lowercase();
        if trimmed == "none" || trimmed.is_empty() {
            return Ok(policy);
        }
        for part in trimmed.split('+').map(str::trim) {
            let flag = match part {
                "sn" => &mut policy.use_sn,
                "ol" => &mut policy.use_ol,
                "ow" => &mut policy.use_ow,
                "nog" => &mut policy.use_nog,
                "olr" => &mut policy.use_olr,
                other => {
                    return Err(OrthoError::InvalidPolicy(format!(
                        "unknown treatment `{other}`"
                    )))
                }
            };
            *flag = true;
        }
        policy.validate()?;
        Ok(policy)
    }
}

/// `W / σ_max(W)`.
pub fn spectral_normalize(w: &Matrix) -> Result<Matrix, OrthoError> {
    let sigma = svd(w)?.s[0];
    if sigma == 0.0 {
        return Err(OrthoError::Domain("cannot normalize a zero matrix".into()));
    }
    Ok(w.scale(1.0 / sigma))
}

/// Gradient through [`spectral_normalize`]:
/// `∂l/∂W = G/σ − (⟨G, W⟩/σ²) u₁v₁ᵀ` for `G = ∂l/∂(W/σ)`.
pub fn spectral_normalize_backward(w: &Matrix, grad: &Matrix) -> Result<Matrix, OrthoError> {
    let f = svd(w)?;
    let sigma = f.s[0];
    if sigma == 0.0 {
        return Err(OrthoError::Domain("cannot normalize a zero matrix".into()));
    }
    let u1 = Matrix::from_vec(w.rows(), 1, f.u.column(0))?;
    let v1 = Matrix::from_vec(w.cols(), 1, f.v.column(0))?;
    let mut out = grad.scale(1.0 / sigma);
    out.axpy(-grad.frobenius_dot(w) / (sigma * sigma), &u1.matmul_t(&v1)?);
    Ok(out)
}

/// Soft orthogonality loss `‖WWᵀ − I‖_F` and its gradient
/// `2 (WWᵀ − I) W / ‖WWᵀ − I‖_F` (zero on the orthogonal manifold).
pub fn ortho_loss(w: &Matrix) -> Result<(f64, Matrix), OrthoError> {
    w.ensure_square()?;
    let mut residual = w.matmul_t(w)?;
    for i in 0..residual.rows() {
        residual[(i, i)] -= 1.0;
    }
    let loss = residual.frobenius_norm();
    if loss <= OL_MANIFOLD_TOL {
        return Ok((loss, Matrix::zeros(w.rows(), w.cols())));
    }
    let grad = (&residual * w).scale(2.0 / loss);
    Ok((loss, grad))
}

/// Orthogonal weight `exp(V − Vᵀ)` from the free parameter `V`.
pub fn ortho_weight(v: &Matrix) -> Result<Matrix, OrthoError> {
    v.ensure_square()?;
    Ok(mat_exp(&(v - &v.transpose()))?)
}

/// Gradient through [`ortho_weight`]: `D − Dᵀ` with `D` the adjoint
/// derivative of the exponential at `V − Vᵀ` applied to `∂l/∂E`.
pub fn ortho_weight_backward(v: &Matrix, grad: &Matrix) -> Result<Matrix, OrthoError> {
    v.ensure_square()?;
    let d = mat_exp_adjoint(&(v - &v.transpose()), grad)?;
    Ok(&d - &d.transpose())
}

/// Nearest orthogonal matrix `UVᵀ` to `G = U S Vᵀ`.
///
/// Singular values below `1e-12 S_max` are dropped; the SVD completes the
/// left basis on that subspace, so the result stays orthogonal.
pub fn nearest_orthogonal_gradient(g: &Matrix) -> Result<Matrix, OrthoError> {
    g.ensure_finite()?;
    let f = svd(g)?;
    if f.s.first().copied().unwrap_or(0.0) == 0.0 {
        return Err(OrthoError::DegenerateGradient("zero gradient has no orthogonal factor"));
    }
    Ok(f.u.matmul_t(&f.v)?)
}

/// Closed form `G (GᵀG)^{-1/2}` of the nearest orthogonal matrix, valid for
/// full column rank.
pub fn nearest_orthogonal_closed_form(g: &Matrix) -> Result<Matrix, OrthoError> {
    let gram = g.t_matmul(g)?;
    Ok(g * &mat_inv_sqrt(&gram, 0.0)?)
}

/// Optimal learning rate and the step actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlrResult {
    pub eta_star: f64,
    pub eta_used: f64,
    /// True when the fallback learning rate was used.
    pub switched: bool,
}

/// Raw `η* = (wᵀw · lᵀw) / (wᵀw · lᵀl + 2 (lᵀw)²)` on the vectorized weight
/// and gradient.
pub fn eta_star(w: &Matrix, g: &Matrix) -> f64 {
    let ww = w.frobenius_dot(w);
    let lw = g.frobenius_dot(w);
    let ll = g.frobenius_dot(g);
    (ww * lw) / (ww * ll + 2.0 * lw * lw)
}

/// Optimal learning rate with the switch rule: `η*` when `0 < η* < lr`,
/// otherwise `lr`.
pub fn optimal_learning_rate(w: &Matrix, g: &Matrix, lr: f64) -> Result<OlrResult, OrthoError> {
    if w.shape() != g.shape() {
        return Err(OrthoError::Linalg(LinalgError::DimensionMismatch {
            op: "optimal_learning_rate",
            left: w.shape(),
            right: g.shape(),
        }));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(OrthoError::Domain(format!("learning rate must be positive, got {lr}")));
    }
    if g.frobenius_norm() == 0.0 {
        return Err(OrthoError::DegenerateGradient("zero gradient has no optimal step"));
    }
    let star = eta_star(w, g);
    // A non-positive η* would ascend; fall back to lr.
    let usable = star.is_finite() && star > 0.0 && star < lr;
    Ok(OlrResult {
        eta_star: star,
        eta_used: if usable { star } else { lr },
        switched: !usable,
    })
}

/// Effective weight of the layer for a given trained parameter.
pub fn apply_policy_forward(policy: &OrthoPolicy, param: &Matrix) -> Result<Matrix, OrthoError> {
    policy.validate()?;
    if policy.use_sn {
        spectral_normalize(param)
    } else if policy.use_ow {
        ortho_weight(param)
    } else {
        Ok(param.clone())
    }
}

/// Maps a gradient with respect to the effective weight back to the
/// trained parameter.
pub fn parametrization_backward(
    policy: &OrthoPolicy,
    param: &Matrix,
    grad_effective: &Matrix,
) -> Result<Matrix, OrthoError> {
    if policy.use_sn {
        spectral_normalize_backward(param, grad_effective)
    } else if policy.use_ow {
        ortho_weight_backward(param, grad_effective)
    } else {
        Ok(grad_effective.clone())
    }
}

/// Outcome of the treatment pipeline for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    /// Final update direction (after OL and NOG).
    pub gradient: Matrix,
    /// Step size for the direction.
    pub eta: f64,
    pub olr: Option<OlrResult>,
    /// `‖GGᵀ − I‖_F` of the final direction.
    pub grad_ortho_residual: f64,
    /// `‖WWᵀ − I‖_F` of the effective weight the step started from.
    pub weight_ortho_residual: f64,
    /// NOG was requested but skipped for a degenerate gradient.
    pub nog_skipped: bool,
    /// OLR was requested but skipped for a degenerate gradient.
    pub olr_skipped: bool,
}

/// Runs the treatment pipeline on the gradient of the trained parameter:
/// (1) add the mapped orthogonal-loss gradient, (2) replace the gradient by
/// its nearest orthogonal matrix, (3) pick the step size, and report the
/// residuals.
pub fn process_gradient(
    policy: &OrthoPolicy,
    param: &Matrix,
    grad: &Matrix,
    lr: f64,
) -> Result<PolicyStep, OrthoError> {
    policy.validate()?;
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(OrthoError::Domain(format!("learning rate must be positive, got {lr}")));
    }
    if grad.shape() != param.shape() {
        return Err(OrthoError::Linalg(LinalgError::DimensionMismatch {
            op: "process_gradient",
            left: param.shape(),
            right: grad.shape(),
        }));
    }
    let effective = apply_policy_forward(policy, param)?;
    let mut g = grad.clone();

    if policy.use_ol {
        let (_, ol_grad) = ortho_loss(&effective)?;
        let mapped = parametrization_backward(policy, param, &ol_grad)?;
        g.axpy(policy.ol_gamma, &mapped);
    }

    let mut nog_skipped = false;
    if policy.use_nog {
        match nearest_orthogonal_gradient(&g) {
            Ok(r) => g = r,
            Err(OrthoError::DegenerateGradient(_)) => nog_skipped = true,
            Err(e) => return Err(e),
        }
    }

    let mut olr = None;
    let mut olr_skipped = false;
    let mut eta = lr;
    if policy.use_olr {
        match optimal_learning_rate(&effective, &g, lr) {
            Ok(r) => {
                eta = r.eta_used;
                olr = Some(r);
            }
            Err(OrthoError::DegenerateGradient(_)) => olr_skipped = true,
            Err(e) => return Err(e),
        }
    }

    let grad_ortho_residual = if g.is_square() {
        g.orthogonality_residual()
    } else {
        f64::NAN
    };
    let weight_ortho_residual = if effective.is_square() {
        effective.orthogonality_residual()
    } else {
        f64::NAN
    };
    Ok(PolicyStep {
        gradient: g,
        eta,
        olr,
        grad_ortho_residual,
        weight_ortho_residual,
        nog_skipped,
        olr_skipped,
    })
}

/// New parameter and the step record.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyUpdate {
    pub new_param: Matrix,
    pub step: PolicyStep,
}

/// Plain treated SGD step `param − η G` on the trained parameter.
pub fn apply_policy_update(
    policy: &OrthoPolicy,
    param: &Matrix,
    grad: &Matrix,
    lr: f64,
) -> Result<PolicyUpdate, OrthoError> {
    let step = process_gradient(policy, param, grad, lr)?;
    let mut new_param = param.clone();
    new_param.axpy(-step.eta, &step.gradient);
    Ok(PolicyUpdate { new_param, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck::{central_difference, relative_error};
    use crate::sampling::{gaussian_matrix, random_orthogonal, seeded_rng, with_singular_values};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn policy(s: &str) -> OrthoPolicy {
        s.parse().unwrap()
    }

    #[test]
    fn policy_parsing_and_labels() {
        assert_eq!(policy("none"), OrthoPolicy::none());
        let p = policy("OW+nog+olr");
        assert!(p.use_ow && p.use_nog && p.use_olr && !p.use_sn);
        assert_eq!(p.label(), "ow+nog+olr");
        assert_eq!(policy("olr+nog+ow").label(), "ow+nog+olr");
        assert!("sn+ow".parse::<OrthoPolicy>().is_err());
        assert!("qr".parse::<OrthoPolicy>().is_err());
    }

    #[test]
    fn spectral_normalize_cases() {
        let q = random_orthogonal(&mut seeded_rng(1), 5);
        assert!((&spectral_normalize(&q).unwrap() - &q).max_abs() < 1e-14);
        let d = spectral_normalize(&Matrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(d, Matrix::from_diag(&[1.0, 0.5]));
        let w = gaussian_matrix(&mut seeded_rng(2), 8, 8);
        let top = svd(&spectral_normalize(&w).unwrap()).unwrap().s[0];
        assert!((top - 1.0).abs() <= 1e-10);
        assert!(spectral_normalize(&Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn spectral_normalize_gradient() {
        let mut rng = seeded_rng(3);
        let w = gaussian_matrix(&mut rng, 4, 4);
        let g = gaussian_matrix(&mut rng, 4, 4);
        let analytic = spectral_normalize_backward(&w, &g).unwrap();
        let fd = central_difference(&w, 1e-6, |wp| {
            spectral_normalize(wp).ok().map(|e| e.frobenius_dot(&g))
        })
        .unwrap();
        assert!(relative_error(&analytic, &fd) < 1e-6);
    }

    #[test]
    fn ortho_loss_cases() {
        let q = random_orthogonal(&mut seeded_rng(4), 4);
        let (loss, grad) = ortho_loss(&q).unwrap();
        assert!(loss < 1e-12);
        assert_eq!(grad, Matrix::zeros(4, 4));
        let (loss, _) = ortho_loss(&Matrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(loss, 3.0);
    }

    #[test]
    fn ortho_loss_gradient() {
        let mut rng = seeded_rng(5);
        for d in [2, 3, 6] {
            let w = gaussian_matrix(&mut rng, d, d);
            let (_, grad) = ortho_loss(&w).unwrap();
            let fd = central_difference(&w, 1e-6, |wp| ortho_loss(wp).ok().map(|(l, _)| l)).unwrap();
            assert!(relative_error(&grad, &fd) < 1e-5, "d={d}");
        }
    }

    #[test]
    fn ortho_weight_cases() {
        let mut rng = seeded_rng(6);
        let b = gaussian_matrix(&mut rng, 4, 4);
        let sym = &b + &b.transpose();
        assert_eq!(ortho_weight(&sym).unwrap(), Matrix::identity(4));
        let v = Matrix::from_rows(&[[0.0, FRAC_PI_2], [0.0, 0.0]]);
        let e = ortho_weight(&v).unwrap();
        assert!((&e - &Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]])).max_abs() < 1e-14);
        let v = gaussian_matrix(&mut rng, 16, 16);
        assert!(ortho_weight(&v).unwrap().orthogonality_residual() <= 1e-8);
    }

    #[test]
    fn ortho_weight_gradient() {
        let mut rng = seeded_rng(7);
        let v = gaussian_matrix(&mut rng, 4, 4);
        let g = gaussian_matrix(&mut rng, 4, 4);
        let analytic = ortho_weight_backward(&v, &g).unwrap();
        let fd = central_difference(&v, 1e-5, |vp| ortho_weight(vp).ok().map(|e| e.frobenius_dot(&g)))
            .unwrap();
        assert!(relative_error(&analytic, &fd) < 1e-4);
        assert_eq!(ortho_weight_backward(&v, &Matrix::zeros(4, 4)).unwrap(), Matrix::zeros(4, 4));
        let at_zero = ortho_weight_backward(&Matrix::zeros(4, 4), &g).unwrap();
        assert!((&at_zero - &(&g - &g.transpose())).max_abs() < 1e-14);
    }

    #[test]
    fn nog_cases() {
        let q = random_orthogonal(&mut seeded_rng(8), 5);
        assert!((&nearest_orthogonal_gradient(&q).unwrap() - &q).max_abs() < 1e-12);
        let r = nearest_orthogonal_gradient(&Matrix::from_diag(&[3.0, 0.5])).unwrap();
        assert_eq!(r, Matrix::identity(2));
        let scaled = nearest_orthogonal_gradient(&q.scale(7.5)).unwrap();
        assert!((&scaled - &q).max_abs() < 1e-12);
        assert!(matches!(
            nearest_orthogonal_gradient(&Matrix::zeros(3, 3)),
            Err(OrthoError::DegenerateGradient(_))
        ));
    }

    #[test]
    fn nog_rank_deficient_stays_orthogonal() {
        let g = with_singular_values(&mut seeded_rng(9), &[2.0, 1.0, 0.0, 0.0]);
        let r = nearest_orthogonal_gradient(&g).unwrap();
        assert!(r.orthogonality_residual() < 1e-10);
        // Same action on the preserved subspace: RᵀG is symmetric PSD.
        let rtg = r.t_matmul(&g).unwrap();
        assert!(rtg.asymmetry() < 1e-10);
    }

    #[test]
    fn olr_cases() {
        let eye = Matrix::identity(5);
        let r = optimal_learning_rate(&eye, &eye, 1.0).unwrap();
        assert!((r.eta_star - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.eta_used, r.eta_star);
        assert!(!r.switched);
        let r = optimal_learning_rate(&eye, &eye, 0.1).unwrap();
        assert_eq!(r.eta_used, 0.1);
        assert!(r.switched);

        let skew = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
        let r = optimal_learning_rate(&Matrix::identity(2), &skew, 0.1).unwrap();
        assert_eq!(r.eta_star, 0.0);
        assert!(r.switched);
        assert_eq!(r.eta_used, 0.1);

        assert!(matches!(
            optimal_learning_rate(&eye, &Matrix::zeros(5, 5), 0.1),
            Err(OrthoError::DegenerateGradient(_))
        ));
        assert!(optimal_learning_rate(&eye, &eye, 0.0).is_err());
    }

    #[test]
    fn policy_forward_dispatch() {
        let w = gaussian_matrix(&mut seeded_rng(10), 3, 3);
        assert_eq!(apply_policy_forward(&OrthoPolicy::none(), &w).unwrap(), w);
        let sym = &w + &w.transpose();
        assert_eq!(apply_policy_forward(&policy("ow"), &sym).unwrap(), Matrix::identity(3));
        let sn = apply_policy_forward(&policy("sn"), &Matrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(sn, Matrix::from_diag(&[1.0, 0.5]));
    }

    #[test]
    fn policy_update_none_is_sgd() {
        let mut rng = seeded_rng(11);
        let w = gaussian_matrix(&mut rng, 3, 3);
        let g = gaussian_matrix(&mut rng, 3, 3);
        let up = apply_policy_update(&OrthoPolicy::none(), &w, &g, 0.05).unwrap();
        let mut expected = w.clone();
        expected.axpy(-0.05, &g);
        assert_eq!(up.new_param, expected);
        assert_eq!(up.step.eta, 0.05);
    }

    #[test]
    fn policy_update_nog_uses_orthogonal_direction() {
        let w = Matrix::identity(2);
        let up = apply_policy_update(&policy("nog"), &w, &Matrix::from_diag(&[3.0, 0.5]), 0.1)
            .unwrap();
        assert_eq!(up.step.gradient, Matrix::identity(2));
        assert_eq!(up.new_param, Matrix::from_diag(&[0.9, 0.9]));
    }

    #[test]
    fn policy_update_degenerate_gradient_is_skipped() {
        let w = Matrix::identity(3);
        let up = apply_policy_update(&policy("nog+olr"), &w, &Matrix::zeros(3, 3), 0.1).unwrap();
        assert!(up.step.nog_skipped && up.step.olr_skipped);
        assert_eq!(up.new_param, w);
    }

    #[test]
    fn policy_update_with_orthogonal_loss() {
        let w = Matrix::from_diag(&[2.0, 1.0]);
        let mut p = policy("ol");
        p.ol_gamma = 0.5;
        let up = apply_policy_update(&p, &w, &Matrix::zeros(2, 2), 0.1).unwrap();
        // OL gradient 2(WWᵀ−I)W/3 = diag(4, 0).
        assert!((&up.step.gradient - &Matrix::from_diag(&[2.0, 0.0])).max_abs() < 1e-15);
    }

    #[test]
    fn combined_policy_over_random_steps() {
        let p = policy("ow+nog+olr");
        let mut rng = seeded_rng(12);
        let lr = 0.1;
        for _ in 0..100 {
            let v = gaussian_matrix(&mut rng, 8, 8);
            let g = gaussian_matrix(&mut rng, 8, 8);
            let up = apply_policy_update(&p, &v, &g, lr).unwrap();
            assert!(up.step.eta > 0.0 && up.step.eta <= lr);
            assert!(up.step.grad_ortho_residual <= 1e-8);
            assert!(up.step.weight_ortho_residual <= 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nog_properties(seed in any::<u64>(), n in 2usize..=32) {
            let g = gaussian_matrix(&mut seeded_rng(seed), n, n);
            let r = nearest_orthogonal_gradient(&g).unwrap();
            prop_assert!(r.orthogonality_residual() <= 1e-8);
            for s in svd(&r).unwrap().s {
                prop_assert!((s - 1.0).abs() <= 1e-10);
            }
            let rtg = r.t_matmul(&g).unwrap();
            prop_assert!(rtg.asymmetry() <= 1e-8 * rtg.frobenius_norm());
            let min_eig = crate::linalg::sym_eig(&rtg.symmetrize()).unwrap().lambdas[n - 1];
            prop_assert!(min_eig >= -1e-8 * rtg.frobenius_norm());
        }

        #[test]
        fn nog_closed_form_equivalence(seed in any::<u64>(), n in 2usize..=16, log_kappa in 0.0f64..=6.0) {
            let mut rng = seeded_rng(seed);
            let kappa = 10f64.powf(log_kappa);
            let sigmas: Vec<f64> = (0..n)
                .map(|i| kappa.powf(-(i as f64) / (n - 1) as f64))
                .collect();
            let g = with_singular_values(&mut rng, &sigmas);
            let r = nearest_orthogonal_gradient(&g).unwrap();
            let closed = nearest_orthogonal_closed_form(&g).unwrap();
            // Forming GᵀG costs a factor κ² in accuracy, so 1e-8 only holds
            // for moderate κ; past that the error follows ε·κ².
            let tol = f64::max(1e-8, 100.0 * n as f64 * f64::EPSILON * kappa * kappa);
            prop_assert!((&r - &closed).frobenius_norm() <= tol, "kappa {kappa:e}");
        }

        #[test]
        fn olr_bounds_on_orthogonal_pairs(seed in any::<u64>(), n in prop::sample::select(vec![2usize, 4, 8, 16])) {
            let mut rng = seeded_rng(seed);
            let w = random_orthogonal(&mut rng, n);
            let g = random_orthogonal(&mut rng, n);
            let s = g.frobenius_dot(&w);
            let nn = (n * n) as f64;
            if (1.0..=n as f64).contains(&s) {
                let e = eta_star(&w, &g);
                prop_assert!(e >= 1.0 / (nn + 2.0) && e <= nn / (nn + 2.0));
            }
        }

        #[test]
        fn olr_scale_response(seed in any::<u64>(), c in 0.01f64..100.0) {
            let mut rng = seeded_rng(seed);
            let w = gaussian_matrix(&mut rng, 4, 4);
            let g = gaussian_matrix(&mut rng, 4, 4);
            let ww = w.frobenius_dot(&w);
            let lw = g.frobenius_dot(&w);
            let ll = g.frobenius_dot(&g);
            let direct = eta_star(&w, &g.scale(c));
            let substituted = (ww * c * lw) / (ww * c * c * ll + 2.0 * c * c * lw * lw);
            prop_assert!((direct - substituted).abs() <= 1e-12 * substituted.abs());
            prop_assert!((direct - eta_star(&w, &g) / c).abs() <= 1e-12 * direct.abs());
        }

        #[test]
        fn olr_never_exceeds_lr(seed in any::<u64>(), lr in 1e-4f64..1.0) {
            let mut rng = seeded_rng(seed);
            let w = gaussian_matrix(&mut rng, 3, 3);
            let g = gaussian_matrix(&mut rng, 3, 3);
            prop_assert!(optimal_learning_rate(&w, &g, lr).unwrap().eta_used <= lr);
        }
    }
}
