//! Gaussian-mixture classification data.

use rand::seq::SliceRandom;

use super::TrainError;
use crate::linalg::Matrix;
use crate::sampling::{gaussian_matrix, SeededRng};

/// Shape of a synthetic dataset.
///
/// Class `c` has a mean `μ_c ~ N(0, I)` and a mixing matrix
/// `L_c = I + mixing·Z_c/√d`; each point is `μ_c + spread·L_c z`.
/// A sample is a `dim × points_per_sample` matrix of such points, so
/// `points_per_sample = 1` gives plain feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub spread: f64,
    pub mixing: f64,
    pub points_per_sample: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 16,
            samples_per_class: 400,
            spread: 1.0,
            mixing: 1.0,
            points_per_sample: 1,
        }
    }
}

/// Fraction of every class held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.dim < 2 {
            return fail(format!("feature dimension must be at least 2, got {}", self.dim));
        }
        if self.samples_per_class < 5 {
            return fail(format!(
                "need at least 5 samples per class for a stratified split, got {}",
                self.samples_per_class
            ));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return fail(format!("spread must be finite and non-negative, got {}", self.spread));
        }
        if !(self.mixing >= 0.0 && self.mixing.is_finite()) {
            return fail(format!("mixing must be finite and non-negative, got {}", self.mixing));
        }
        if self.points_per_sample == 0 {
            return fail("points per sample must be positive".into());
        }
        Ok(())
    }

    pub fn validation_per_class(&self) -> usize {
        ((self.samples_per_class as f64 * VALIDATION_FRACTION).round() as usize).max(1)
    }
}

/// Labelled samples, each a `dim × points` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub samples: Vec<Matrix>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples at `indices` laid side by side, `dim × (len·points)`.
    pub fn stacked(&self, indices: &[usize]) -> Matrix {
        let parts: Vec<&Matrix> = indices.iter().map(|&i| &self.samples[i]).collect();
        Matrix::hstack(&parts).expect("samples share the feature dimension")
    }
}

/// Generates the train and validation sets.
///
/// The split is stratified: the same number of samples of every class is
/// held out, chosen by a seeded shuffle.
pub fn synth_dataset(
    spec: &DatasetSpec,
    rng: &mut SeededRng,
) -> Result<(Dataset, Dataset), TrainError> {
    spec.validate()?;
    let d = spec.dim;
    let held_out = spec.validation_per_class();
    let empty = || Dataset {
        dim: d,
        classes: spec.classes,
        samples: Vec::new(),
        labels: Vec::new(),
    };
    let (mut train, mut val) = (empty(), empty());

    for class in 0..spec.classes {
        let mean = gaussian_matrix(rng, d, 1);
        let mut mixing = gaussian_matrix(rng, d, d).scale(spec.mixing / (d as f64).sqrt());
        for i in 0..d {
            mixing[(i, i)] += 1.0;
        }
        let mut samples: Vec<Matrix> = (0..spec.samples_per_class)
            .map(|_| {
                let noise = &mixing * &gaussian_matrix(rng, d, spec.points_per_sample);
                Matrix::from_fn(d, spec.points_per_sample, |i, j| {
                    mean[(i, 0)] + spec.spread * noise[(i, j)]
                })
            })
            .collect();
        samples.shuffle(rng);
        for (k, sample) in samples.into_iter().enumerate() {
            let target = if k < held_out { &mut val } else { &mut train };
            target.samples.push(sample);
            target.labels.push(class);
        }
    }
    Ok((train, val))
}
