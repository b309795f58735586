//! Datasets, synthetic generation, Dirichlet label-skew partitioning and
//! per-client train/validation/test splitting.

mod io;
mod partition;

pub use io::{
    read_csv, read_dataset_cache, read_partition_json, write_csv, write_dataset_cache, write_partition_json,
    PartitionFile, PartitionFileClient,
};
pub use partition::{
    class_histogram, label_entropy, largest_remainder, mean_label_entropy, partition_dirichlet, split_shard,
    ClientShard, PartitionSpec, SplitFractions,
};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FedPaeError, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Labeled feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Vec<T>, labels: Vec<usize>, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(FedPaeError::input(format!(
                "a dataset needs at least 2 classes, got {n_classes}"
            )));
        }
        if n_features == 0 {
            return Err(FedPaeError::input("a dataset needs at least one feature"));
        }
        if features.len() != labels.len() * n_features {
            return Err(FedPaeError::input(format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(FedPaeError::input(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[T], usize)> + '_ {
        self.features
            .chunks_exact(self.n_features)
            .zip(self.labels.iter().copied())
    }

    /// Copies the given rows (in the given order) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset<T>> {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(FedPaeError::input(format!(
                    "index {i} out of range for dataset of {} samples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            features,
            labels,
            n_features: self.n_features,
            n_classes: self.n_classes,
        })
    }

    /// Concatenates datasets that share a shape.
    pub fn concat(parts: &[&Dataset<T>]) -> Result<Dataset<T>> {
        let first = parts
            .first()
            .ok_or_else(|| FedPaeError::input("cannot concatenate zero datasets"))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.n_features != first.n_features || p.n_classes != first.n_classes {
                return Err(FedPaeError::input("concatenated datasets differ in shape"));
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(features, labels, first.n_features, first.n_classes)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self.features.iter().map(|v| U::lit(v.as_f64())).collect(),
            labels: self.labels.clone(),
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }
}

/// Parameters of the isotropic Gaussian-mixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_features: usize,
    pub n_samples: usize,
    /// Pairwise distance between class means.
    pub class_separation: f64,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(FedPaeError::config("n_classes", "must be at least 2"));
        }
        if self.n_features == 0 {
            return Err(FedPaeError::config("n_features", "must be positive"));
        }
        if self.n_samples < self.n_classes {
            return Err(FedPaeError::config(
                "n_samples",
                format!("must be at least n_classes ({})", self.n_classes),
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(FedPaeError::config("class_separation", "must be finite and > 0"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(FedPaeError::config("noise_scale", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Class means with pairwise distance `separation`.
///
/// When there are at least as many features as classes the means sit on a
/// randomly rotated scaled simplex and the distances are exact; otherwise they
/// are Gaussian draws rescaled so the mean pairwise distance is `separation`.
fn class_means(spec: &SyntheticSpec, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    let (c, d) = (spec.n_classes, spec.n_features);
    let draw = |rng: &mut crate::rng::Rng| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    if d >= c {
        // Gram-Schmidt on Gaussian vectors gives a random orthonormal set.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c);
        while basis.len() < c {
            let mut v = draw(rng);
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let scale = spec.class_separation / std::f64::consts::SQRT_2;
        basis
            .into_iter()
            .map(|b| b.into_iter().map(|x| x * scale).collect())
            .collect()
    } else {
        let means: Vec<Vec<f64>> = (0..c).map(|_| draw(rng)).collect();
        let mut total = 0.0;
        let mut pairs = 0.0;
        for i in 0..c {
            for j in i + 1..c {
                total += means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                pairs += 1.0;
            }
        }
        let scale = spec.class_separation / (total / pairs);
        means
            .into_iter()
            .map(|m| m.into_iter().map(|x| x * scale).collect())
            .collect()
    }
}

/// Draws a balanced Gaussian-mixture dataset.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let means = class_means(spec, &mut rng);
    let mut labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.n_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(spec.n_samples * spec.n_features);
    for &label in &labels {
        for &m in &means[label] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(T::lit(m + spec.noise_scale * noise));
        }
    }
    Dataset::new(features, labels, spec.n_features, spec.n_classes)
}
