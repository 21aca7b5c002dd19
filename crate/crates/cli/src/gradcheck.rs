//! `gradcheck`: every analytic backward pass against central differences.

use std::io::Write;

use orthocond::fdcheck::{central_difference, relative_error, DEFAULT_STEP};
use orthocond::linalg::{mat_exp, mat_exp_adjoint, Matrix};
use orthocond::metalayer::{default_reg, meta_backward, meta_forward, MetaMode};
use orthocond::ortho::{
    ortho_loss, ortho_weight, ortho_weight_backward, spectral_normalize, spectral_normalize_backward,
    OrthoPolicy,
};
use orthocond::sampling::{features_with_spectrum, gaussian_matrix, seeded_rng, with_singular_values, SeededRng};
use orthocond::train::{decorrelated_bn, decorrelated_bn_backward, Network, Variant};

use crate::{say, CliError};

pub const MAX_DIM: usize = 16;
pub const DEFAULT_DIMS: [usize; 4] = [2, 4, 8, 16];
pub const DEFAULT_SEEDS: u64 = 3;
pub const DEFAULT_TOL: f64 = 1e-4;

/// A gradient check: relative error of the analytic gradient at dimension
/// `d` for one seeded draw.
#[derive(Clone, Copy)]
pub struct GradCheck {
    pub name: &'static str,
    pub run: fn(usize, &mut SeededRng) -> Result<f64, String>,
}

pub fn registry() -> Vec<GradCheck> {
    vec![
        GradCheck { name: "meta_sqrt", run: |d, rng| meta_check(MetaMode::Sqrt, d, rng) },
        GradCheck { name: "meta_inv_sqrt", run: |d, rng| meta_check(MetaMode::InvSqrt, d, rng) },
        GradCheck { name: "decorrelated_bn", run: whitening_check },
        GradCheck { name: "mat_exp", run: mat_exp_check },
        GradCheck { name: "ortho_weight", run: ortho_weight_check },
        GradCheck { name: "spectral_normalize", run: spectral_check },
        GradCheck { name: "ortho_loss", run: ortho_loss_check },
        GradCheck { name: "network_pre_svd", run: network_check },
    ]
}

fn fd<F: FnMut(&Matrix) -> Option<f64>>(x: &Matrix, f: F) -> Result<Matrix, String> {
    central_difference(x, DEFAULT_STEP, f).ok_or_else(|| "forward failed at a probe point".to_string())
}

/// Eigenvalues spaced 0.4 apart, smallest 0.9.
fn gapped_spectrum(d: usize) -> Vec<f64> {
    (0..d).map(|i| 0.5 + 0.4 * (d - i) as f64).collect()
}

fn meta_check(mode: MetaMode, d: usize, rng: &mut SeededRng) -> Result<f64, String> {
    let x = features_with_spectrum(rng, &gapped_spectrum(d), 2 * d + 4);
    let g = gaussian_matrix(rng, d, d);
    let (_, cache) = meta_forward(&x, mode, 0.0).map_err(|e| e.to_string())?;
    let reg = default_reg(&cache.factor.lambdas);
    let analytic = meta_backward(&cache, &g, reg).map_err(|e| e.to_string())?;
    let numeric = fd(&x, |xp| meta_forward(xp, mode, 0.0).ok().map(|(y, _)| y.frobenius_dot(&g)))?;
    Ok(relative_error(&analytic, &numeric))
}

fn whitening_check(d: usize, rng: &mut SeededRng) -> Result<f64, String> {
    let x = features_with_spectrum(rng, &gapped_spectrum(d), 2 * d + 4);
    let n = x.cols();
    let g = gaussian_matrix(rng, d, n);
    let eps = 1e-5;
    let (_, cache) = decorrelated_bn(&x, eps).map_err(|e| e.to_string())?;
    let analytic = decorrelated_bn_backward(&cache, &g, None).map_err(|e| e.to_string())?;
    let numeric = fd(&x, |xp| decorrelated_bn(xp, eps).ok().map(|(y, _)| y.frobenius_dot(&g)))?;
    Ok(relative_error(&analytic, &numeric))
}

fn mat_exp_check(d: usize, rng: &mut SeededRng) -> Result<f64, String> {
    let a = gaussian_matrix(rng, d, d).scale(1.0 / (d as f64).sqrt());
    let g = gaussian_matrix(rng, d, d);
    let analytic = mat_exp_adjoint(&a, &g).map_err(|e| e.to_string())?;
    let numeric = fd(&a, |ap| mat_exp(ap).ok().map(|e| e.frobenius_dot(&g)))?;
    Ok(relative_error(&analytic, &numeric))
}

fn ortho_weight_check(d: usize, rng: &mut SeededRng) -> Result<f64, String> {
    let v = gaussian_matrix(rng, d, d).scale(1.0 / (d as f64).sqrt());
    let g = gaussian_matrix(rng, d, d);
    let analytic = ortho_weight_backward(&v, &g).map_err(|e| e.to_string())?;
    let numeric = fd(&v, |vp| ortho_weight(vp).ok().map(|e| e.frobenius_dot(&g)))?;
    Ok(relative_error(&analytic, &numeric))
}

fn spectral_check(d: usize, rng: &mut SeededRng) -> Result<f64, String> {
    // A clear gap below the top singular value keeps σ_max differentiable.
    let sigmas: Vec<f64> = (0..d).map(|i| if i == 0 { 2.0 } else { 1.0 / i as f64 }).collect();
    let w = with_singular_values(rng, &sigmas);
    let g = gaussian_matrix(rng, d, d);
    let analytic = spectral_normalize_backward(&w, &g).map_err(|e| e.to_string())?;
    let numeric = fd(&w, |wp| spectral_normalize(wp).ok().map(|s| s.frobenius_dot(&g)))?;
    Ok(relative_error(&analytic, &numeric))
}

fn ortho_loss_check(d: usize, rng: &mut SeededRng) -> Result<f64, String> {
    let w = gaussian_matrix(rng, d, d).scale(1.0 / (d as f64).sqrt());
    let (_, analytic) = ortho_loss(&w).map_err(|e| e.to_string())?;
    let numeric = fd(&w, |wp| ortho_loss(wp).ok().map(|(l, _)| l))?;
    Ok(relative_error(&analytic, &numeric))
}

fn network_check(d: usize, rng: &mut SeededRng) -> Result<f64, String> {
    let classes = 3;
    let mut net = Network::new(Variant::DecorrBn, OrthoPolicy::none(), d, classes, 1e-5, rng)
        .map_err(|e| e.to_string())?;
    net.head_weight = gaussian_matrix(rng, classes, d);
    let samples: Vec<Matrix> = (0..2 * d + 4).map(|_| gaussian_matrix(rng, d, 1)).collect();
    let batch: Vec<&Matrix> = samples.iter().collect();
    let labels: Vec<usize> = (0..batch.len()).map(|i| i % classes).collect();
    let analytic = net.batch_outcome(&batch, &labels).map_err(|e| e.to_string())?.grads.pre_param;
    let numeric = fd(&net.pre_param, |p| {
        let mut probe = net.clone();
        probe.pre_param = p.clone();
        probe.batch_loss(&batch, &labels).ok()
    })?;
    Ok(relative_error(&analytic, &numeric))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub dim: usize,
    /// Worst relative error over seeds; NaN if a draw failed outright.
    pub max_rel_error: f64,
    pub passed: bool,
    pub failure: Option<String>,
}

/// Runs every registered check at every dimension, each over `seeds`
/// seeded draws. A check passes when its error is strictly below `tol`.
pub fn run_checks(dims: &[usize], seeds: u64, tol: f64) -> Result<Vec<CheckResult>, CliError> {
    if dims.is_empty() {
        return Err(CliError::Input("no dimensions given".into()));
    }
    if let Some(&d) = dims.iter().find(|&&d| !(2..=MAX_DIM).contains(&d)) {
        return Err(CliError::Input(format!("dimension {d} outside 2..={MAX_DIM}")));
    }
    if seeds == 0 {
        return Err(CliError::Input("need at least one seed".into()));
    }
    if !(tol >= 0.0) {
        return Err(CliError::Input(format!("tolerance must be non-negative, got {tol}")));
    }
    let mut results = Vec::new();
    for check in registry() {
        for &dim in dims {
            let mut worst = 0.0f64;
            let mut failure = None;
            for seed in 0..seeds {
                let mut rng = seeded_rng(seed.wrapping_mul(1000) + dim as u64);
                match (check.run)(dim, &mut rng) {
                    Ok(err) if err.is_nan() => failure = Some("error is NaN".to_string()),
                    Ok(err) => worst = worst.max(err),
                    Err(msg) => failure = Some(format!("seed {seed}: {msg}")),
                }
            }
            let max_rel_error = if failure.is_some() { f64::NAN } else { worst };
            results.push(CheckResult {
                name: check.name,
                dim,
                max_rel_error,
                passed: failure.is_none() && max_rel_error < tol,
                failure,
            });
        }
    }
    Ok(results)
}

pub fn cmd_gradcheck(
    dims: &[usize],
    seeds: u64,
    tol: f64,
    out: &mut dyn Write,
) -> Result<Vec<CheckResult>, CliError> {
    let results = run_checks(dims, seeds, tol)?;
    for r in &results {
        let status = if r.passed { "ok" } else { "FAIL" };
        say!(out, "{:<20} d={:<3} max rel err {:.3e}  {status}", r.name, r.dim, r.max_rel_error);
        if let Some(msg) = &r.failure {
            say!(out, "    {msg}");
        }
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} d={}", r.name, r.dim))
        .collect();
    say!(out, "{} checks, {} failed (tolerance {tol:e})", results.len(), failed.len());
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(CliError::CheckFailed(format!("gradient checks failed: {}", failed.join(", "))))
    }
}
