//! Pre-SVD layer, the two meta-layer networks, and their manual backward
//! pass.

use std::fmt;
use std::str::FromStr;

use super::data::Dataset;
use super::TrainError;
use crate::linalg::{condition_number_from_eigenvalues, mat_inv_sqrt, LinalgError, Matrix};
use crate::metalayer::{default_reg, meta_backward, meta_forward, MetaError, MetaLayerCache, MetaMode};
use crate::ortho::{apply_policy_forward, parametrization_backward, OrthoPolicy};
use crate::sampling::{gaussian_matrix, SeededRng};

/// `W X + b 𝟙ᵀ`.
pub fn pre_svd_forward(w: &Matrix, b: &[f64], x: &Matrix) -> Result<Matrix, LinalgError> {
    if b.len() != w.rows() {
        return Err(LinalgError::DimensionMismatch {
            op: "pre_svd_forward",
            left: w.shape(),
            right: (b.len(), 1),
        });
    }
    let mut z = w.matmul(x)?;
    let cols = z.cols();
    for (i, bi) in b.iter().enumerate() {
        for j in 0..cols {
            z[(i, j)] += bi;
        }
    }
    Ok(z)
}

/// State kept by [`decorrelated_bn`] for its backward pass.
#[derive(Debug, Clone)]
pub struct WhiteningCache {
    pub meta: MetaLayerCache,
    pub whitening: Matrix,
    pub centered: Matrix,
}

/// ZCA whitening with batch statistics: `(P + ε)^{-1/2} (X − mean)`.
pub fn decorrelated_bn(x: &Matrix, eps: f64) -> Result<(Matrix, WhiteningCache), MetaError> {
    let (whitening, meta) = meta_forward(x, MetaMode::InvSqrt, eps)?;
    let centered = x.center_rows();
    let xw = &whitening * &centered;
    Ok((
        xw,
        WhiteningCache {
            meta,
            whitening,
            centered,
        },
    ))
}

/// Gradient of [`decorrelated_bn`] with respect to its input.
pub fn decorrelated_bn_backward(
    cache: &WhiteningCache,
    d_xw: &Matrix,
    reg: Option<f64>,
) -> Result<Matrix, MetaError> {
    let d_whitening = d_xw.matmul_t(&cache.centered)?;
    // The whitening matrix is symmetric, and centering is a projector.
    let mut dx = (&cache.whitening * d_xw).center_rows();
    let reg = reg.unwrap_or_else(|| default_reg(&cache.meta.factor.lambdas));
    dx.axpy(1.0, &meta_backward(&cache.meta, &d_whitening, reg)?);
    Ok(dx)
}

/// Covariance square root `(P + ε)^{1/2}` used as a pooled representation.
pub fn gcp_head(x: &Matrix, eps: f64) -> Result<(Matrix, MetaLayerCache), MetaError> {
    meta_forward(x, MetaMode::Sqrt, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Whitened features feed the classifier.
    DecorrBn,
    /// The flattened covariance square root of each sample feeds the
    /// classifier.
    Gcp,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::DecorrBn => "decorr_bn",
            Variant::Gcp => "gcp",
        })
    }
}

impl FromStr for Variant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "decorr_bn" | "decorrbn" | "decorrelated_bn" => Ok(Variant::DecorrBn),
            "gcp" => Ok(Variant::Gcp),
            other => Err(TrainError::Config(format!("unknown network variant `{other}`"))),
        }
    }
}

/// Update rate of the running statistics used by decorrelated BN at
/// evaluation time.
pub const RUNNING_STAT_MOMENTUM: f64 = 0.1;

/// `input → Pre-SVD (d×d) → meta-layer → linear classifier`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub variant: Variant,
    pub policy: OrthoPolicy,
    /// Trained Pre-SVD parameter; the layer weight is
    /// `apply_policy_forward(policy, pre_param)`.
    pub pre_param: Matrix,
    pub pre_bias: Vec<f64>,
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
    /// Eigenvalue floor of the meta-layer.
    pub eps: f64,
    /// Eigengap regularization; `None` uses the default relative weight.
    pub reg: Option<f64>,
    pub running_mean: Vec<f64>,
    pub running_cov: Matrix,
}

/// Parameter gradients for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub pre_param: Matrix,
    pub pre_bias: Vec<f64>,
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            pre_param: Matrix::zeros(net.pre_param.rows(), net.pre_param.cols()),
            pre_bias: vec![0.0; net.pre_bias.len()],
            head_weight: Matrix::zeros(net.head_weight.rows(), net.head_weight.cols()),
            head_bias: vec![0.0; net.head_bias.len()],
        }
    }
}

/// Loss, gradients and statistics of one training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: f64,
    pub correct: usize,
    pub log10_kappa: f64,
    pub grads: Gradients,
    /// Batch mean and covariance entering the meta-layer (decorrelated BN).
    pub batch_stats: Option<(Vec<f64>, Matrix)>,
}

impl Network {
    /// Pre-SVD parameter with i.i.d. `N(0, 1/d)` entries, zero biases and a
    /// zero classifier, so an untrained network predicts class 0 everywhere.
    pub fn new(
        variant: Variant,
        policy: OrthoPolicy,
        dim: usize,
        classes: usize,
        eps: f64,
        rng: &mut SeededRng,
    ) -> Result<Self, TrainError> {
        policy.validate()?;
        if dim < 2 || classes < 2 {
            return Err(TrainError::Config(format!(
                "network needs dim ≥ 2 and classes ≥ 2, got {dim} and {classes}"
            )));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(TrainError::Config(format!("eps must be finite and non-negative, got {eps}")));
        }
        let features = match variant {
            Variant::DecorrBn => dim,
            Variant::Gcp => dim * dim,
        };
        Ok(Self {
            variant,
            policy,
            pre_param: gaussian_matrix(rng, dim, dim).scale(1.0 / (dim as f64).sqrt()),
            pre_bias: vec![0.0; dim],
            head_weight: Matrix::zeros(classes, features),
            head_bias: vec![0.0; classes],
            eps,
            reg: None,
            running_mean: vec![0.0; dim],
            running_cov: Matrix::identity(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.pre_param.rows()
    }

    pub fn classes(&self) -> usize {
        self.head_weight.rows()
    }

    pub fn effective_weight(&self) -> Result<Matrix, TrainError> {
        Ok(apply_policy_forward(&self.policy, &self.pre_param)?)
    }

    fn check_batch(&self, samples: &[&Matrix], labels: &[usize]) -> Result<(), TrainError> {
        if samples.is_empty() || samples.len() != labels.len() {
            return Err(TrainError::Config(format!(
                "batch has {} samples and {} labels",
                samples.len(),
                labels.len()
            )));
        }
        for (s, &l) in samples.iter().zip(labels) {
            if s.rows() != self.dim() {
                return Err(LinalgError::DimensionMismatch {
                    op: "batch",
                    left: self.pre_param.shape(),
                    right: s.shape(),
                }
                .into());
            }
            if self.variant == Variant::DecorrBn && s.cols() != 1 {
                return Err(TrainError::Config("decorrelated BN expects one point per sample".into()));
            }
            if l >= self.classes() {
                return Err(TrainError::Config(format!("label {l} out of range")));
            }
        }
        if self.variant == Variant::DecorrBn && samples.len() < 2 {
            return Err(TrainError::Config("decorrelated BN needs at least 2 samples per batch".into()));
        }
        Ok(())
    }

    /// Training-mode forward and backward pass with softmax cross-entropy
    /// averaged over the batch.
    pub fn batch_outcome(&self, samples: &[&Matrix], labels: &[usize]) -> Result<BatchOutcome, TrainError> {
        self.check_batch(samples, labels)?;
        let w = self.effective_weight()?;
        let b = samples.len();
        let mut grads = Gradients::zeros_like(self);
        let mut d_weight = Matrix::zeros(self.dim(), self.dim());

        match self.variant {
            Variant::DecorrBn => {
                let parts: Vec<&Matrix> = samples.to_vec();
                let x = Matrix::hstack(&parts)?;
                let z = pre_svd_forward(&w, &self.pre_bias, &x)?;
                let (xw, cache) = decorrelated_bn(&z, self.eps)?;
                let logits = self.logits(&xw)?;
                let (loss, correct, d_logits) = softmax_cross_entropy(&logits, labels);
                grads.head_weight = d_logits.matmul_t(&xw)?;
                grads.head_bias = row_sums(&d_logits);
                let d_xw = self.head_weight.t_matmul(&d_logits)?;
                let dz = decorrelated_bn_backward(&cache, &d_xw, self.reg)?;
                d_weight = dz.matmul_t(&x)?;
                grads.pre_bias = row_sums(&dz);
                let log10_kappa = condition_number_from_eigenvalues(&cache.meta.factor.lambdas).log10();
                let stats = (z.row_means(), cache.meta.p.clone());
                grads.pre_param = parametrization_backward(&self.policy, &self.pre_param, &d_weight)?;
                Ok(BatchOutcome {
                    loss,
                    correct,
                    log10_kappa,
                    grads,
                    batch_stats: Some(stats),
                })
            }
            Variant::Gcp => {
                let mut pooled = Vec::with_capacity(b);
                let mut caches = Vec::with_capacity(b);
                let mut log_kappa_sum = 0.0;
                for s in samples {
                    let z = pre_svd_forward(&w, &self.pre_bias, s)?;
                    let (q, cache) = gcp_head(&z, self.eps)?;
                    log_kappa_sum += condition_number_from_eigenvalues(&cache.factor.lambdas).log10();
                    pooled.push(Matrix::from_vec(q.rows() * q.cols(), 1, q.into_vec())?);
                    caches.push(cache);
                }
                let parts: Vec<&Matrix> = pooled.iter().collect();
                let features = Matrix::hstack(&parts)?;
                let logits = self.logits(&features)?;
                let (loss, correct, d_logits) = softmax_cross_entropy(&logits, labels);
                grads.head_weight = d_logits.matmul_t(&features)?;
                grads.head_bias = row_sums(&d_logits);
                let d_features = self.head_weight.t_matmul(&d_logits)?;
                let d = self.dim();
                for (k, (s, cache)) in samples.iter().zip(&caches).enumerate() {
                    let dq = Matrix::from_vec(d, d, d_features.column(k))?;
                    let reg = self.reg.unwrap_or_else(|| default_reg(&cache.factor.lambdas));
                    let dz = meta_backward(cache, &dq, reg)?;
                    d_weight.axpy(1.0, &dz.matmul_t(s)?);
                    for (gb, r) in grads.pre_bias.iter_mut().zip(row_sums(&dz)) {
                        *gb += r;
                    }
                }
                grads.pre_param = parametrization_backward(&self.policy, &self.pre_param, &d_weight)?;
                Ok(BatchOutcome {
                    loss,
                    correct,
                    log10_kappa: log_kappa_sum / b as f64,
                    grads,
                    batch_stats: None,
                })
            }
        }
    }

    /// Training-mode loss only.
    pub fn batch_loss(&self, samples: &[&Matrix], labels: &[usize]) -> Result<f64, TrainError> {
        Ok(self.batch_outcome(samples, labels)?.loss)
    }

    /// Log10 condition number of the covariance entering the meta-layer
    /// (mean over samples for GCP).
    pub fn batch_log10_kappa(&self, samples: &[&Matrix]) -> Result<f64, TrainError> {
        let w = self.effective_weight()?;
        let kappa_of = |x: &Matrix| -> Result<f64, TrainError> {
            let z = pre_svd_forward(&w, &self.pre_bias, x)?;
            let (_, cache) = meta_forward(&z, MetaMode::Sqrt, 0.0)?;
            Ok(condition_number_from_eigenvalues(&cache.factor.lambdas).log10())
        };
        match self.variant {
            Variant::DecorrBn => {
                let parts: Vec<&Matrix> = samples.to_vec();
                kappa_of(&Matrix::hstack(&parts)?)
            }
            Variant::Gcp => {
                let mut sum = 0.0;
                for s in samples {
                    sum += kappa_of(s)?;
                }
                Ok(sum / samples.len() as f64)
            }
        }
    }

    /// Blends batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, mean: &[f64], cov: &Matrix) {
        let m = RUNNING_STAT_MOMENTUM;
        for (r, b) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        self.running_cov = &self.running_cov.scale(1.0 - m) + &cov.scale(m);
    }

    fn logits(&self, features: &Matrix) -> Result<Matrix, TrainError> {
        let mut logits = self.head_weight.matmul(features)?;
        let cols = logits.cols();
        for (c, bias) in self.head_bias.iter().enumerate() {
            for j in 0..cols {
                logits[(c, j)] += bias;
            }
        }
        Ok(logits)
    }

    /// Evaluation-mode class predictions. Decorrelated BN whitens with the
    /// running statistics instead of batch statistics.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>, TrainError> {
        if data.is_empty() {
            return Ok(Vec::new());
        }
        let w = self.effective_weight()?;
        let features = match self.variant {
            Variant::DecorrBn => {
                let all: Vec<usize> = (0..data.len()).collect();
                let mut z = pre_svd_forward(&w, &self.pre_bias, &data.stacked(&all))?;
                let cols = z.cols();
                for (i, m) in self.running_mean.iter().enumerate() {
                    for j in 0..cols {
                        z[(i, j)] -= m;
                    }
                }
                let whitening = mat_inv_sqrt(&self.running_cov.symmetrize(), self.eps)?;
                &whitening * &z
            }
            Variant::Gcp => {
                let mut pooled = Vec::with_capacity(data.len());
                for s in &data.samples {
                    let z = pre_svd_forward(&w, &self.pre_bias, s)?;
                    let (q, _) = gcp_head(&z, self.eps)?;
                    pooled.push(Matrix::from_vec(q.rows() * q.cols(), 1, q.into_vec())?);
                }
                let parts: Vec<&Matrix> = pooled.iter().collect();
                Matrix::hstack(&parts)?
            }
        };
        let logits = self.logits(&features)?;
        Ok((0..logits.cols()).map(|j| argmax(&logits.column(j))).collect())
    }

    /// Validation error in percent.
    pub fn error_rate(&self, data: &Dataset) -> Result<f64, TrainError> {
        if data.is_empty() {
            return Ok(f64::NAN);
        }
        let wrong = self
            .predict(data)?
            .iter()
            .zip(&data.labels)
            .filter(|(p, l)| p != l)
            .count();
        Ok(100.0 * wrong as f64 / data.len() as f64)
    }
}

impl From<MetaError> for TrainError {
    fn from(e: MetaError) -> Self {
        TrainError::Meta(e)
    }
}

/// First index of the maximum, so ties resolve to the lowest class.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn row_sums(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().sum()).collect()
}

/// Mean cross-entropy over the columns of `logits`, the number of correct
/// predictions, and the gradient with respect to the logits.
fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, usize, Matrix) {
    let (k, b) = logits.shape();
    let mut grad = Matrix::zeros(k, b);
    let mut loss = 0.0;
    let mut correct = 0;
    for j in 0..b {
        let col = logits.column(j);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss += total.ln() + max - col[labels[j]];
        if argmax(&col) == labels[j] {
            correct += 1;
        }
        for c in 0..k {
            let target = if c == labels[j] { 1.0 } else { 0.0 };
            grad[(c, j)] = (exps[c] / total - target) / b as f64;
        }
    }
    (loss / b as f64, correct, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metalayer::covariance;
    use crate::sampling::{gaussian_matrix, seeded_rng};
    use proptest::prelude::*;

    /// Features whose covariance is exactly `target`: whiten a random draw,
    /// then color it with `target^{1/2}`.
    fn with_covariance(target: &Matrix, n: usize, seed: u64) -> Matrix {
        let raw = gaussian_matrix(&mut seeded_rng(seed), target.rows(), n);
        let (p, _) = covariance(&raw).unwrap();
        let white = &mat_inv_sqrt(&p, 0.0).unwrap() * &raw.center_rows();
        &crate::linalg::mat_sqrt(target).unwrap() * &white
    }

    #[test]
    fn pre_svd_forward_cases() {
        let x = gaussian_matrix(&mut seeded_rng(1), 3, 5);
        assert_eq!(pre_svd_forward(&Matrix::identity(3), &[0.0; 3], &x).unwrap(), x);
        let c = [1.5, -2.0, 0.25];
        let z = pre_svd_forward(&Matrix::zeros(3, 3), &c, &x).unwrap();
        for i in 0..3 {
            assert!(z.row(i).iter().all(|&v| v == c[i]));
        }
        assert!(pre_svd_forward(&Matrix::identity(3), &[0.0; 2], &x).is_err());
    }

    #[test]
    fn pre_svd_forward_matches_naive_loops() {
        let mut rng = seeded_rng(2);
        let w = gaussian_matrix(&mut rng, 4, 4);
        let x = gaussian_matrix(&mut rng, 4, 7);
        let b = [0.1, 0.2, -0.3, 0.4];
        let z = pre_svd_forward(&w, &b, &x).unwrap();
        for i in 0..4 {
            for j in 0..7 {
                let mut acc = b[i];
                for k in 0..4 {
                    acc += w[(i, k)] * x[(k, j)];
                }
                assert!((z[(i, j)] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn whitening_of_white_input_only_centers() {
        let x = with_covariance(&Matrix::identity(4), 32, 3);
        let shifted = x.map(|v| v + 2.0);
        let (xw, _) = decorrelated_bn(&shifted, 0.0).unwrap();
        assert!((&xw - &shifted.center_rows()).max_abs() < 1e-10);
    }

    #[test]
    fn whitening_identity_on_random_batch() {
        let x = gaussian_matrix(&mut seeded_rng(4), 4, 64);
        let (xw, _) = decorrelated_bn(&x, 0.0).unwrap();
        let (cov, _) = covariance(&xw).unwrap();
        assert!((&cov - &Matrix::identity(4)).frobenius_norm() <= 1e-6);
    }

    #[test]
    fn whitening_constant_batch_is_finite() {
        let x = Matrix::from_fn(3, 8, |i, _| i as f64);
        let (xw, _) = decorrelated_bn(&x, 1e-5).unwrap();
        assert!(xw.is_finite());
        assert_eq!(xw, Matrix::zeros(3, 8));
    }

    #[test]
    fn gcp_head_cases() {
        let x = with_covariance(&Matrix::from_diag(&[4.0, 9.0]), 40, 5);
        let (q, _) = gcp_head(&x, 0.0).unwrap();
        assert!((&q - &Matrix::from_diag(&[2.0, 3.0])).max_abs() < 1e-10);
        let x = with_covariance(&Matrix::identity(3), 20, 6);
        let (q, _) = gcp_head(&x, 0.0).unwrap();
        assert!((&q - &Matrix::identity(3)).max_abs() < 1e-10);
    }

    #[test]
    fn decorrelated_bn_backward_matches_finite_differences() {
        let mut rng = seeded_rng(7);
        let x = gaussian_matrix(&mut rng, 3, 10);
        let probe = gaussian_matrix(&mut rng, 3, 10);
        let (_, cache) = decorrelated_bn(&x, 1e-3).unwrap();
        let analytic = decorrelated_bn_backward(&cache, &probe, None).unwrap();
        let fd = crate::fdcheck::central_difference(&x, 1e-6, |xp| {
            decorrelated_bn(xp, 1e-3).ok().map(|(y, _)| y.frobenius_dot(&probe))
        })
        .unwrap();
        assert!(crate::fdcheck::relative_error(&analytic, &fd) < 1e-6);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("decorr_bn".parse::<Variant>().unwrap(), Variant::DecorrBn);
        assert_eq!("GCP".parse::<Variant>().unwrap(), Variant::Gcp);
        assert_eq!(Variant::DecorrBn.to_string().parse::<Variant>().unwrap(), Variant::DecorrBn);
        assert!("resnet".parse::<Variant>().is_err());
    }

    #[test]
    fn softmax_cross_entropy_uniform_logits() {
        let (loss, correct, grad) = softmax_cross_entropy(&Matrix::zeros(4, 2), &[0, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert_eq!(correct, 1);
        assert!((grad[(0, 0)] - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!((grad[(1, 0)] - 0.125).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gcp_output_is_symmetric_psd(seed in any::<u64>(), d in 2usize..6, n in 2usize..20) {
            let x = gaussian_matrix(&mut seeded_rng(seed), d, n);
            let (q, _) = gcp_head(&x, 0.0).unwrap();
            prop_assert_eq!(q.asymmetry(), 0.0);
            let lambdas = crate::linalg::sym_eig(&q).unwrap().lambdas;
            prop_assert!(lambdas.iter().all(|&l| l >= 0.0));
        }

        #[test]
        fn whitening_identity(seed in any::<u64>(), d in 2usize..8) {
            let x = gaussian_matrix(&mut seeded_rng(seed), d, 8 * d);
            let (xw, _) = decorrelated_bn(&x, 0.0).unwrap();
            let (cov, _) = covariance(&xw).unwrap();
            prop_assert!((&cov - &Matrix::identity(d)).frobenius_norm() <= 1e-6);
        }
    }
}
