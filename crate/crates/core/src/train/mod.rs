//! Desk-scale trainer: a Pre-SVD layer feeding a meta-layer and a linear
//! classifier, trained by SGD on Gaussian mixtures while the conditioning of
//! the meta-layer covariance is traced.
//!
//! Momentum and weight decay follow the usual `v ← μv + (g + λp)`,
//! `p ← p − ηv` form. On the Pre-SVD parameter the treatments act on the
//! loss gradient first ([`process_gradient`]) and the optimizer then adds
//! weight decay and momentum to the treated direction, the way a gradient
//! hook runs before the optimizer step. Momentum is off when the optimal
//! learning rate is in use, and weight decay is off under the
//! orthogonal-weight parametrization; with both off the step is exactly
//! [`apply_policy_update`](crate::ortho::apply_policy_update).

mod data;
mod network;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use thiserror::Error;

pub use data::{synth_dataset, Dataset, DatasetSpec, VALIDATION_FRACTION};
pub use network::{
    decorrelated_bn, decorrelated_bn_backward, gcp_head, pre_svd_forward, BatchOutcome, Gradients,
    Network, Variant, WhiteningCache, RUNNING_STAT_MOMENTUM,
};

use crate::linalg::{LinalgError, Matrix};
use crate::metalayer::MetaError;
use crate::ortho::{process_gradient, OrthoError, OrthoPolicy};
use crate::sampling::SeededRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Meta(MetaError),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl TrainError {
    /// Failures that skip a step instead of aborting the run: solver
    /// non-convergence, a singular spectral derivative, or non-finite values
    /// reaching the meta-layer.
    pub fn is_recoverable(&self) -> bool {
        let linalg = |e: &LinalgError| e.is_solver_failure() || matches!(e, LinalgError::NonFinite);
        match self {
            TrainError::Meta(MetaError::Linalg(e)) | TrainError::Linalg(e) => linalg(e),
            TrainError::Meta(MetaError::SingularGradient(_)) => true,
            TrainError::Ortho(OrthoError::Linalg(e)) => linalg(e),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub dataset: DatasetSpec,
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub policy: OrthoPolicy,
    /// Eigenvalue floor of the meta-layer.
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DecorrBn,
            dataset: DatasetSpec::default(),
            batch_size: 64,
            epochs: 20,
            lr: 0.05,
            lr_milestones: vec![10, 15],
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            policy: OrthoPolicy::none(),
            eps: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.dataset.validate()?;
        self.policy.validate()?;
        let fail = |msg: String| Err(TrainError::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("learning-rate decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size < 2 {
            return fail(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return fail(format!("eps must be finite and non-negative, got {}", self.eps));
        }
        match self.variant {
            Variant::DecorrBn if self.dataset.points_per_sample != 1 => {
                fail("decorrelated BN expects one point per sample".into())
            }
            Variant::Gcp if self.dataset.points_per_sample < 2 => {
                fail("GCP needs at least 2 points per sample".into())
            }
            _ => Ok(()),
        }
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_decay.powi(passed as i32)
    }

    /// Whether the Pre-SVD parameter uses momentum.
    pub fn pre_svd_momentum(&self) -> bool {
        self.momentum > 0.0 && !self.policy.use_olr
    }

    /// Whether the Pre-SVD parameter is weight-decayed.
    pub fn pre_svd_weight_decay(&self) -> bool {
        !self.policy.use_ow
    }
}

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Shuffle = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Momentum buffers for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
}

impl OptimizerState {
    pub fn new(net: &Network) -> Self {
        Self {
            velocity: Gradients::zeros_like(net),
        }
    }
}

/// One row of the conditioning trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Cross-entropy of the batch (NaN if the step failed).
    pub loss: f64,
    /// Training accuracy of the batch in percent.
    pub accuracy: f64,
    /// Validation error in percent at the end of this record's epoch.
    pub val_error: f64,
    /// `log10 κ(P)` of the raw covariance; `+inf` for a singular one.
    pub log10_kappa: f64,
    /// Step size applied to the Pre-SVD parameter (0 if skipped).
    pub eta_used: f64,
    pub grad_ortho_residual: f64,
    pub weight_ortho_residual: f64,
    /// Cumulative count of skipped steps.
    pub svd_failures: usize,
}

fn sgd_momentum(param: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
    for ((p, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        let g = g + cfg.weight_decay * *p;
        *v = cfg.momentum * *v + g;
        *p -= lr * *v;
    }
}

/// What [`apply_gradients`] did to the Pre-SVD parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreSvdUpdate {
    pub eta_used: f64,
    pub grad_ortho_residual: f64,
    pub weight_ortho_residual: f64,
}

/// Applies one optimizer step at learning rate `lr`: the treatment
/// pipeline on the Pre-SVD parameter and momentum SGD with weight decay
/// everywhere else.
pub fn apply_gradients(
    net: &mut Network,
    state: &mut OptimizerState,
    grads: &Gradients,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<PreSvdUpdate, TrainError> {
    let step = process_gradient(&net.policy, &net.pre_param, &grads.pre_param, lr)?;
    let mut direction = step.gradient.clone();
    if cfg.pre_svd_weight_decay() {
        direction.axpy(cfg.weight_decay, &net.pre_param);
    }
    if cfg.pre_svd_momentum() {
        let v = &mut state.velocity.pre_param;
        *v = v.scale(cfg.momentum);
        v.axpy(1.0, &direction);
        direction = v.clone();
    }
    let mut new_param = net.pre_param.clone();
    new_param.axpy(-step.eta, &direction);
    if !new_param.is_finite() {
        return Err(LinalgError::NonFinite.into());
    }

    net.pre_param = new_param;
    sgd_momentum(&mut net.pre_bias, &mut state.velocity.pre_bias, &grads.pre_bias, lr, cfg);
    sgd_momentum(
        net.head_weight.as_mut_slice(),
        state.velocity.head_weight.as_mut_slice(),
        grads.head_weight.as_slice(),
        lr,
        cfg,
    );
    sgd_momentum(&mut net.head_bias, &mut state.velocity.head_bias, &grads.head_bias, lr, cfg);
    Ok(PreSvdUpdate {
        eta_used: step.eta,
        grad_ortho_residual: step.grad_ortho_residual,
        weight_ortho_residual: step.weight_ortho_residual,
    })
}

/// Forward, backward and update on one batch.
///
/// A recoverable failure (see [`TrainError::is_recoverable`]) leaves the
/// network untouched, increments `failures`, and still returns a record.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    net: &mut Network,
    state: &mut OptimizerState,
    samples: &[&Matrix],
    labels: &[usize],
    cfg: &TrainConfig,
    step: usize,
    epoch: usize,
    failures: &mut usize,
) -> Result<StepRecord, TrainError> {
    let attempt = |net: &mut Network, state: &mut OptimizerState| {
        let outcome = net.batch_outcome(samples, labels)?;
        let mut trial_net = net.clone();
        let mut trial_state = state.clone();
        let update = apply_gradients(
            &mut trial_net,
            &mut trial_state,
            &outcome.grads,
            cfg.lr_at(epoch),
            cfg,
        )?;
        if let Some((mean, cov)) = &outcome.batch_stats {
            trial_net.update_running_stats(mean, cov);
        }
        *net = trial_net;
        *state = trial_state;
        Ok::<_, TrainError>((outcome, update))
    };
    match attempt(net, state) {
        Ok((outcome, update)) => Ok(StepRecord {
            step,
            epoch,
            loss: outcome.loss,
            accuracy: 100.0 * outcome.correct as f64 / labels.len() as f64,
            val_error: f64::NAN,
            log10_kappa: outcome.log10_kappa,
            eta_used: update.eta_used,
            grad_ortho_residual: update.grad_ortho_residual,
            weight_ortho_residual: update.weight_ortho_residual,
            svd_failures: *failures,
        }),
        Err(e) if e.is_recoverable() => {
            *failures += 1;
            let log10_kappa = net.batch_log10_kappa(samples).unwrap_or(f64::NAN);
            Ok(StepRecord {
                step,
                epoch,
                loss: f64::NAN,
                accuracy: f64::NAN,
                val_error: f64::NAN,
                log10_kappa,
                eta_used: 0.0,
                grad_ortho_residual: f64::NAN,
                weight_ortho_residual: f64::NAN,
                svd_failures: *failures,
            })
        }
        Err(e) => Err(e),
    }
}

/// Every step of a run plus per-epoch validation error.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningTrace {
    pub records: Vec<StepRecord>,
    /// Validation error (percent) before training.
    pub initial_val_error: f64,
    /// Validation error (percent) at the end of each epoch.
    pub epoch_val_errors: Vec<f64>,
    pub classes: usize,
}

/// Number of final epochs averaged by [`TraceSummary::mean_final_val_error`].
pub const FINAL_EPOCH_WINDOW: usize = 5;

/// Scalar summary of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSummary {
    pub steps: usize,
    pub epochs: usize,
    /// Validation error after the last epoch (initial error if no epochs).
    pub final_val_error: f64,
    /// Mean over the last [`FINAL_EPOCH_WINDOW`] epochs.
    pub mean_final_val_error: f64,
    pub min_val_error: f64,
    /// Mean of `log10 κ` over steps; `+inf` if any covariance was singular,
    /// NaN if there were no steps.
    pub mean_log10_kappa: f64,
    pub svd_failures: usize,
}

impl TraceSummary {
    /// Geometric-mean condition number `10^{mean log10 κ}`.
    pub fn geo_mean_kappa(&self) -> f64 {
        10f64.powf(self.mean_log10_kappa)
    }
}

impl ConditioningTrace {
    pub fn summary(&self) -> TraceSummary {
        let errors = &self.epoch_val_errors;
        let final_val_error = errors.last().copied().unwrap_or(self.initial_val_error);
        let window = &errors[errors.len().saturating_sub(FINAL_EPOCH_WINDOW)..];
        let mean_final_val_error = if window.is_empty() {
            self.initial_val_error
        } else {
            window.iter().sum::<f64>() / window.len() as f64
        };
        let min_val_error = errors.iter().copied().fold(final_val_error, f64::min);
        let kappas: Vec<f64> = self
            .records
            .iter()
            .map(|r| r.log10_kappa)
            .filter(|k| !k.is_nan())
            .collect();
        let mean_log10_kappa = if kappas.is_empty() {
            f64::NAN
        } else {
            kappas.iter().sum::<f64>() / kappas.len() as f64
        };
        TraceSummary {
            steps: self.records.len(),
            epochs: errors.len(),
            final_val_error,
            mean_final_val_error,
            min_val_error,
            mean_log10_kappa,
            svd_failures: self.records.last().map_or(0, |r| r.svd_failures),
        }
    }
}

/// Generates the data, initializes the network and trains for
/// `cfg.epochs` epochs. Batches are reshuffled each epoch and a trailing
/// partial batch is dropped.
pub fn run_training(cfg: &TrainConfig) -> Result<ConditioningTrace, TrainError> {
    cfg.validate()?;
    let (train, val) = synth_dataset(&cfg.dataset, &mut stream_rng(cfg.seed, Stream::Data))?;
    let mut net = Network::new(
        cfg.variant,
        cfg.policy,
        cfg.dataset.dim,
        cfg.dataset.classes,
        cfg.eps,
        &mut stream_rng(cfg.seed, Stream::Init),
    )?;
    let mut state = OptimizerState::new(&net);
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);

    let mut trace = ConditioningTrace {
        records: Vec::new(),
        initial_val_error: net.error_rate(&val)?,
        epoch_val_errors: Vec::with_capacity(cfg.epochs),
        classes: cfg.dataset.classes,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut failures = 0;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_start = trace.records.len();
        for batch in order.chunks_exact(cfg.batch_size) {
            let samples: Vec<&Matrix> = batch.iter().map(|&i| &train.samples[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let record = train_step(
                &mut net, &mut state, &samples, &labels, cfg, step, epoch, &mut failures,
            )?;
            trace.records.push(record);
            step += 1;
        }
        let val_error = net.error_rate(&val).or_else(|e| {
            if e.is_recoverable() {
                Ok(f64::NAN)
            } else {
                Err(e)
            }
        })?;
        for r in &mut trace.records[epoch_start..] {
            r.val_error = val_error;
        }
        trace.epoch_val_errors.push(val_error);
    }
    Ok(trace)
}
