//! `run`: seed sweep of one experiment config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use orthocond::train::{run_training, TraceSummary, TrainError};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::trace::{self, format_float};
use crate::{say, CliError};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub summary: TraceSummary,
    pub trace_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub label: String,
    pub seeds: Vec<SeedOutcome>,
    pub summary_path: PathBuf,
}

/// Mean, sample standard deviation and minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    /// NaN with fewer than two values.
    pub std: f64,
    pub min: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            f64::NAN
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        Self { mean, std, min }
    }
}

impl Experiment {
    pub fn final_val_errors(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.summary.final_val_error).collect()
    }

    pub fn log10_kappas(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.summary.mean_log10_kappa).collect()
    }

    /// Mean over seeds of each run's mean `log10 κ`.
    pub fn mean_log10_kappa(&self) -> f64 {
        let k = self.log10_kappas();
        k.iter().sum::<f64>() / k.len() as f64
    }

    pub fn to_json(&self) -> Value {
        let final_errors = self.final_val_errors();
        let windowed: Vec<f64> = self.seeds.iter().map(|s| s.summary.mean_final_val_error).collect();
        let spread = |v: &[f64]| {
            let s = Spread::of(v);
            json!({ "mean": num(s.mean), "std": num(s.std), "min": num(s.min) })
        };
        let mut final_json = spread(&final_errors);
        final_json["per_seed"] = final_errors.iter().copied().map(num).collect();
        let mean_kappa = self.mean_log10_kappa();
        let classes = self.config.classes as f64;
        json!({
            "schema_version": SCHEMA_VERSION,
            "label": self.label,
            "variant": self.config.variant,
            "policy": self.label.split_once('-').map_or("", |(_, p)| p),
            "epochs": self.config.epochs,
            "seeds": self.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(),
            "chance_val_error": num(100.0 * (1.0 - 1.0 / classes)),
            "final_val_error": final_json,
            "final_window_val_error": spread(&windowed),
            "mean_log10_kappa": num(mean_kappa),
            "geo_mean_kappa": num(10f64.powf(mean_kappa)),
            "log10_kappa_per_seed": self.log10_kappas().into_iter().map(num).collect::<Vec<_>>(),
            "svd_failures": self.seeds.iter().map(|s| s.summary.svd_failures).sum::<usize>(),
        })
    }
}

/// JSON has no non-finite numbers; those are written as in the CSV files.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format_float(x))
    }
}

fn train_error(seed: u64, e: TrainError) -> CliError {
    match e {
        TrainError::Config(msg) => CliError::Input(format!("invalid config: {msg}")),
        other => CliError::CheckFailed(format!("seed {seed}: training aborted: {other}")),
    }
}

/// Runs every seed (up to `jobs` at a time), writes the trace files and
/// `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Experiment, CliError> {
    cfg.validate()?;
    let label = cfg.label()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let run_seed = |&seed: &u64| -> Result<SeedOutcome, CliError> {
        let train_cfg = cfg.train_config(seed)?;
        let trace = run_training(&train_cfg).map_err(|e| train_error(seed, e))?;
        let trace_path = dir.join(trace::file_name(&label, seed));
        trace::write_trace(&trace_path, &trace::logged_rows(&trace, cfg.flush_interval))?;
        Ok(SeedOutcome {
            seed,
            summary: trace.summary(),
            trace_path,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Input(format!("cannot start {jobs} workers: {e}")))?;
    let seeds = pool.install(|| cfg.seeds.par_iter().map(run_seed).collect::<Result<Vec<_>, _>>())?;

    let experiment = Experiment {
        config: cfg.clone(),
        label,
        seeds,
        summary_path: dir.join(SUMMARY_FILE),
    };
    let mut text = serde_json::to_string_pretty(&experiment.to_json()).expect("json values serialize");
    text.push('\n');
    fs::write(&experiment.summary_path, text).map_err(|e| CliError::io(&experiment.summary_path, e))?;
    Ok(experiment)
}

pub fn cmd_run(config_path: &Path, jobs: usize, out: &mut dyn Write) -> Result<Experiment, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let experiment = run_experiment(&cfg, jobs)?;
    for s in &experiment.seeds {
        say!(
            out,
            "{} seed {}: final val error {:.2}%, mean log10 kappa {:.3}, svd failures {}",
            experiment.label,
            s.seed,
            s.summary.final_val_error,
            s.summary.mean_log10_kappa,
            s.summary.svd_failures
        );
    }
    let err = Spread::of(&experiment.final_val_errors());
    say!(
        out,
        "{}: val error {:.2} ± {:.2} (min {:.2}), mean log10 kappa {:.3}; wrote {}",
        experiment.label,
        err.mean,
        err.std,
        err.min,
        experiment.mean_log10_kappa(),
        experiment.summary_path.display()
    );
    Ok(experiment)
}
