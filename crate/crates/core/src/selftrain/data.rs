//! Synthetic two-dimensional datasets and input-noise augmentation.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

fn default_moons_noise() -> f64 {
    0.1
}

fn default_circles_noise() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum DatasetKind {
    /// `k` isotropic Gaussians with centres evenly spaced on the unit circle.
    GaussianBlobs { k: usize, spread: f64 },
    TwoMoons {
        #[serde(default = "default_moons_noise")]
        noise: f64,
    },
    ConcentricCircles {
        #[serde(default = "default_circles_noise")]
        noise: f64,
    },
}

impl DatasetKind {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetKind::GaussianBlobs { k, .. } => *k,
            DatasetKind::TwoMoons { .. } | DatasetKind::ConcentricCircles { .. } => 2,
        }
    }
}

fn default_test_size() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub generator: DatasetKind,
    /// Training examples, labeled and unlabeled together.
    pub n: usize,
    pub labeled_per_class: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    /// `None` marks an unlabeled example.
    pub labels: Vec<Option<usize>>,
    pub labeled_indices: Vec<usize>,
    pub num_classes: usize,
    pub test_features: Array2<f64>,
    pub test_labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        test_features: Array2<f64>,
        test_labels: Vec<usize>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return invalid("feature and label counts differ");
        }
        if test_features.nrows() != test_labels.len() {
            return invalid("test feature and label counts differ");
        }
        if test_features.ncols() != features.ncols() {
            return invalid("train and test feature widths differ");
        }
        if num_classes < 2 {
            return invalid("need at least two classes");
        }
        let mut seen = vec![false; num_classes];
        for &y in labels.iter().flatten().chain(&test_labels) {
            if y >= num_classes {
                return invalid(format!("label {y} out of range for {num_classes} classes"));
            }
        }
        for &y in labels.iter().flatten() {
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return invalid(format!("class {missing} has no labeled example"));
        }
        let labeled_indices = labels
            .iter()
            .enumerate()
            .filter_map(|(i, y)| y.map(|_| i))
            .collect();
        Ok(Self {
            features,
            labels,
            labeled_indices,
            num_classes,
            test_features,
            test_labels,
        })
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, y)| y.is_none().then_some(i))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Labeled examples per class.
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.num_classes];
        for &y in self.labels.iter().flatten() {
            counts[y] += 1;
        }
        counts
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_point<R: Rng>(kind: &DatasetKind, class: usize, rng: &mut R) -> [f64; 2] {
    let (x, y, noise) = match *kind {
        DatasetKind::GaussianBlobs { k, spread } => {
            let angle = 2.0 * PI * class as f64 / k as f64;
            (angle.cos(), angle.sin(), spread)
        }
        DatasetKind::TwoMoons { noise } => {
            let t = PI * rng.random::<f64>();
            if class == 0 {
                (t.cos(), t.sin(), noise)
            } else {
                (1.0 - t.cos(), 0.5 - t.sin(), noise)
            }
        }
        DatasetKind::ConcentricCircles { noise } => {
            let t = 2.0 * PI * rng.random::<f64>();
            let radius = if class == 0 { 1.0 } else { 0.5 };
            (radius * t.cos(), radius * t.sin(), noise)
        }
    };
    [x + noise * normal(rng), y + noise * normal(rng)]
}

fn balanced_split<R: Rng>(kind: &DatasetKind, n: usize, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
    let k = kind.num_classes();
    let mut classes: Vec<usize> = (0..n).map(|i| i % k).collect();
    classes.shuffle(rng);
    let mut features = Array2::zeros((n, 2));
    for (i, &c) in classes.iter().enumerate() {
        let [x, y] = sample_point(kind, c, rng);
        features[[i, 0]] = x;
        features[[i, 1]] = y;
    }
    (features, classes)
}

/// Generates a dataset with balanced classes; `labeled_per_class` examples of
/// each class keep their label. Deterministic in `spec.seed`.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let k = spec.generator.num_classes();
    if k < 2 {
        return invalid("need at least two classes");
    }
    if let DatasetKind::GaussianBlobs { spread, .. } = spec.generator {
        if !(spread >= 0.0 && spread.is_finite()) {
            return invalid("spread must be finite and nonnegative");
        }
    }
    if spec.labeled_per_class == 0 {
        return invalid("need at least one labeled example per class");
    }
    if spec.n < k * spec.labeled_per_class || spec.n / k < spec.labeled_per_class {
        return invalid(format!(
            "n={} too small for {} labels per class over {k} classes",
            spec.n, spec.labeled_per_class
        ));
    }
    if spec.test_size == 0 {
        return invalid("test split must be non-empty");
    }
    let mut train_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut test_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    test_rng.set_stream(1);

    let (features, classes) = balanced_split(&spec.generator, spec.n, &mut train_rng);
    let (test_features, test_labels) =
        balanced_split(&spec.generator, spec.test_size, &mut test_rng);

    let mut labels = vec![None; spec.n];
    for c in 0..k {
        let mut members: Vec<usize> = (0..spec.n).filter(|&i| classes[i] == c).collect();
        members.shuffle(&mut train_rng);
        for &i in members.iter().take(spec.labeled_per_class) {
            labels[i] = Some(c);
        }
    }
    Dataset::new(features, labels, k, test_features, test_labels)
}

/// `x + sigma * g` with `g` standard normal.
pub fn augment<R: Rng>(x: ArrayView1<'_, f64>, sigma: f64, rng: &mut R) -> Array1<f64> {
    if sigma == 0.0 {
        return x.to_owned();
    }
    x.mapv(|v| v + sigma * normal(rng))
}
