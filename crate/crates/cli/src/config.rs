//! Experiment configuration file.
//!
//! A flat JSON object. Every key except `schema_version` is optional and
//! defaults to the trainer's defaults:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "output_dir": "results/ow",
//!   "seeds": [0, 1, 2, 3, 4],
//!   "flush_interval": 10,
//!   "variant": "decorr_bn",
//!   "policy": "ow",
//!   "epochs": 20
//! }
//! ```
//!
//! A relative `output_dir` is resolved against the directory holding the
//! config file. `ORTHOCOND_SEED_OVERRIDE` (e.g. `"3,4,5"`) replaces `seeds`.

use std::fs;
use std::path::{Path, PathBuf};

use orthocond::ortho::{OrthoPolicy, DEFAULT_OL_GAMMA};
use orthocond::train::{DatasetSpec, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_OVERRIDE_VAR: &str = "ORTHOCOND_SEED_OVERRIDE";
pub const DEFAULT_FLUSH_INTERVAL: usize = 10;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: Option<u32>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Every `flush_interval`-th step, plus the last step of each epoch,
    /// is written to the trace file.
    pub flush_interval: usize,
    pub variant: String,
    /// `none` or a `+`-joined subset of `sn`, `ol`, `ow`, `nog`, `olr`.
    pub policy: String,
    pub ol_gamma: f64,
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub spread: f64,
    pub mixing: f64,
    pub points_per_sample: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let d = DatasetSpec::default();
        Self {
            schema_version: None,
            output_dir: PathBuf::from("results"),
            seeds: DEFAULT_SEEDS.to_vec(),
            flush_interval: DEFAULT_FLUSH_INTERVAL,
            variant: t.variant.to_string(),
            policy: t.policy.label(),
            ol_gamma: DEFAULT_OL_GAMMA,
            classes: d.classes,
            dim: d.dim,
            samples_per_class: d.samples_per_class,
            spread: d.spread,
            mixing: d.mixing,
            points_per_sample: d.points_per_sample,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            lr_milestones: t.lr_milestones,
            lr_decay: t.lr_decay,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            eps: t.eps,
        }
    }
}

impl ExperimentConfig {
    /// Reads, resolves and validates a config file, applying the seed
    /// override from the environment.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let seed_override = std::env::var(SEED_OVERRIDE_VAR).ok();
        Self::load_with_override(path, seed_override.as_deref())
    }

    pub fn load_with_override(path: &Path, seed_override: Option<&str>) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData => {
                CliError::Input(format!("{}: {e}", path.display()))
            }
            _ => CliError::io(path, e),
        })?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if cfg.output_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(list) = seed_override {
            cfg.seeds = parse_seed_list(list)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("invalid config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match self.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::Input(format!(
                    "unsupported schema_version {v}, expected {SCHEMA_VERSION}"
                )))
            }
            None => return Err(CliError::Input("missing schema_version".into())),
        }
        if self.seeds.is_empty() {
            return Err(CliError::Input("seed list is empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Input("seed list has duplicates".into()));
        }
        if self.flush_interval == 0 {
            return Err(CliError::Input("flush_interval must be positive".into()));
        }
        self.train_config(self.seeds[0])?
            .validate()
            .map_err(|e| CliError::Input(format!("invalid config: {e}")))
    }

    pub fn policy(&self) -> Result<OrthoPolicy, CliError> {
        let mut policy: OrthoPolicy = self
            .policy
            .parse()
            .map_err(|e| CliError::Input(format!("invalid policy: {e}")))?;
        policy.ol_gamma = self.ol_gamma;
        Ok(policy)
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        self.variant
            .parse()
            .map_err(|e| CliError::Input(format!("invalid variant: {e}")))
    }

    /// Trace file label, `<variant>-<policy>`.
    pub fn label(&self) -> Result<String, CliError> {
        Ok(format!("{}-{}", self.variant()?, self.policy()?.label()))
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            variant: self.variant()?,
            dataset: DatasetSpec {
                classes: self.classes,
                dim: self.dim,
                samples_per_class: self.samples_per_class,
                spread: self.spread,
                mixing: self.mixing,
                points_per_sample: self.points_per_sample,
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            lr_milestones: self.lr_milestones.clone(),
            lr_decay: self.lr_decay,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
            policy: self.policy()?,
            eps: self.eps,
        })
    }
}

/// Parses `"1,2,3"`, `"1 2 3"` or `"[1, 2, 3]"`.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>, CliError> {
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    let seeds = inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| CliError::Input(format!("{SEED_OVERRIDE_VAR}: bad seed {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::Input(format!("{SEED_OVERRIDE_VAR} is empty")));
    }
    Ok(seeds)
}
