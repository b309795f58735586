use crate::error::{FedPaeError, Result};
use crate::scalar::{argmax, Scalar};

/// Validation-set class probabilities of every bench model.
///
/// Stored model-major: `probs[model][sample][class]`, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix<T> {
    probs: Vec<T>,
    labels: Vec<usize>,
    n_models: usize,
    n_classes: usize,
}

impl<T: Scalar> PredictionMatrix<T> {
    /// Builds a matrix from one flattened `n_samples x n_classes` column per model.
    pub fn from_columns(columns: Vec<Vec<T>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let n_samples = labels.len();
        if n_classes < 2 {
            return Err(FedPaeError::input("prediction matrix needs at least 2 classes"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(FedPaeError::input(format!("label {l} out of range")));
        }
        let n_models = columns.len();
        let mut probs = Vec::with_capacity(n_models * n_samples * n_classes);
        for (j, col) in columns.into_iter().enumerate() {
            if col.len() != n_samples * n_classes {
                return Err(FedPaeError::input(format!(
                    "column {j} has {} values, expected {}",
                    col.len(),
                    n_samples * n_classes
                )));
            }
            for (i, row) in col.chunks_exact(n_classes).enumerate() {
                let total: T = row.iter().copied().sum();
                if (total - T::one()).abs() > T::lit(1e-5) || row.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
                    return Err(FedPaeError::input(format!(
                        "column {j} sample {i} is not a probability vector"
                    )));
                }
            }
            probs.extend(col);
        }
        Ok(PredictionMatrix {
            probs,
            labels,
            n_models,
            n_classes,
        })
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Flattened `n_samples x n_classes` probabilities of one model.
    pub fn column(&self, model: usize) -> &[T] {
        let width = self.n_samples() * self.n_classes;
        &self.probs[model * width..(model + 1) * width]
    }

    pub fn proba(&self, model: usize, sample: usize) -> &[T] {
        let col = self.column(model);
        &col[sample * self.n_classes..(sample + 1) * self.n_classes]
    }

    /// Argmax accuracy of one model against the matrix labels.
    pub fn model_accuracy(&self, model: usize) -> T {
        if self.n_samples() == 0 {
            return T::zero();
        }
        let correct = (0..self.n_samples())
            .filter(|&i| argmax(self.proba(model, i)) == self.labels[i])
            .count();
        T::from_usize_lossy(correct) / T::from_usize_lossy(self.n_samples())
    }

    /// The matrix restricted to (and reordered by) `models`.
    pub fn select_models(&self, models: &[usize]) -> PredictionMatrix<T> {
        let mut probs = Vec::with_capacity(models.len() * self.n_samples() * self.n_classes);
        for &m in models {
            probs.extend_from_slice(self.column(m));
        }
        PredictionMatrix {
            probs,
            labels: self.labels.clone(),
            n_models: models.len(),
            n_classes: self.n_classes,
        }
    }
}
