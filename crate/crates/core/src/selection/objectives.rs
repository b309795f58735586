//! Ensemble objectives and combination rules over a prediction matrix.

use serde::{Deserialize, Serialize};

use super::PredictionMatrix;
use crate::error::{FedPaeError, Result};
use crate::moo::{Chromosome, ObjectiveVector};
use crate::scalar::{argmax, Scalar};

/// Pairwise diversity between two models' probability columns.
pub trait DiversityMeasure<T: Scalar>: Send + Sync {
    fn pairwise(&self, a: &[T], b: &[T], n_classes: usize) -> Result<T>;
}

/// `(1 - rho) / 2` where `rho` is the Pearson correlation of the flattened
/// probability columns. Identical constant columns score 0; a constant column
/// against anything else scores 0.5.
#[derive(Debug, Clone, Copy, Default)]
pub struct CorrelationDiversity;

/// Fraction of samples on which the two models' argmax labels differ.
#[derive(Debug, Clone, Copy, Default)]
pub struct DisagreementDiversity;

impl<T: Scalar> DiversityMeasure<T> for CorrelationDiversity {
    fn pairwise(&self, a: &[T], b: &[T], _n_classes: usize) -> Result<T> {
        pairwise_diversity(a, b)
    }
}

impl<T: Scalar> DiversityMeasure<T> for DisagreementDiversity {
    fn pairwise(&self, a: &[T], b: &[T], n_classes: usize) -> Result<T> {
        check_shapes(a, b)?;
        if a.is_empty() {
            return Ok(T::zero());
        }
        let rows = a.len() / n_classes;
        let differ = a
            .chunks_exact(n_classes)
            .zip(b.chunks_exact(n_classes))
            .filter(|(x, y)| argmax(x) != argmax(y))
            .count();
        Ok(T::from_usize_lossy(differ) / T::from_usize_lossy(rows))
    }
}

/// Selects the pairwise diversity measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityKind {
    #[default]
    Correlation,
    Disagreement,
}

impl DiversityKind {
    pub fn measure<T: Scalar>(self) -> Box<dyn DiversityMeasure<T>> {
        match self {
            DiversityKind::Correlation => Box::new(CorrelationDiversity),
            DiversityKind::Disagreement => Box::new(DisagreementDiversity),
        }
    }
}

/// How member predictions combine into an ensemble label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingRule {
    /// Argmax of the mean probability vector.
    #[default]
    Soft,
    /// Plurality of member argmax labels.
    Hard,
}

fn check_shapes<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(FedPaeError::input(format!(
            "diversity needs equal column shapes, got {} and {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn pairwise_diversity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_shapes(a, b)?;
    if a.is_empty() || a == b {
        return Ok(T::zero());
    }
    let n = T::from_usize_lossy(a.len());
    let mean_a = a.iter().copied().sum::<T>() / n;
    let mean_b = b.iter().copied().sum::<T>() / n;
    let (mut cov, mut var_a, mut var_b) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov = cov + dx * dy;
        var_a = var_a + dx * dx;
        var_b = var_b + dy * dy;
    }
    let const_a = var_a == T::zero();
    let const_b = var_b == T::zero();
    if const_a || const_b {
        return Ok(T::lit(0.5));
    }
    let rho = (cov / (var_a.sqrt() * var_b.sqrt())).max(-T::one()).min(T::one());
    Ok((T::one() - rho) / T::lit(2.0))
}

fn members(mask: &Chromosome, matrix: &PredictionMatrix<impl Scalar>) -> Result<Vec<usize>> {
    if mask.len() != matrix.n_models() {
        return Err(FedPaeError::input(format!(
            "mask of length {} over a bench of {} models",
            mask.len(),
            matrix.n_models()
        )));
    }
    let selected = mask.selected();
    if selected.is_empty() {
        return Err(FedPaeError::input("ensemble mask selects no models"));
    }
    Ok(selected)
}

/// Mean member validation accuracy.
pub fn strength<T: Scalar>(mask: &Chromosome, matrix: &PredictionMatrix<T>) -> Result<T> {
    let m = members(mask, matrix)?;
    let total: T = m.iter().map(|&j| matrix.model_accuracy(j)).sum();
    Ok(total / T::from_usize_lossy(m.len()))
}

/// Mean pairwise diversity over selected pairs; 0 for a single model.
pub fn diversity<T: Scalar>(
    mask: &Chromosome,
    matrix: &PredictionMatrix<T>,
    measure: &dyn DiversityMeasure<T>,
) -> Result<T> {
    let m = members(mask, matrix)?;
    if m.len() < 2 {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    let mut pairs = 0usize;
    for (x, &a) in m.iter().enumerate() {
        for &b in &m[x + 1..] {
            total = total + measure.pairwise(matrix.column(a), matrix.column(b), matrix.n_classes())?;
            pairs += 1;
        }
    }
    Ok(total / T::from_usize_lossy(pairs))
}

/// Combined ensemble label for every sample.
pub fn ensemble_predict<T: Scalar>(
    mask: &Chromosome,
    matrix: &PredictionMatrix<T>,
    rule: VotingRule,
) -> Result<Vec<usize>> {
    let m = members(mask, matrix)?;
    let c = matrix.n_classes();
    let mut acc = vec![T::zero(); c];
    let mut labels = Vec::with_capacity(matrix.n_samples());
    for i in 0..matrix.n_samples() {
        acc.iter_mut().for_each(|v| *v = T::zero());
        for &j in &m {
            match rule {
                VotingRule::Soft => {
                    for (a, &p) in acc.iter_mut().zip(matrix.proba(j, i)) {
                        *a = *a + p;
                    }
                }
                VotingRule::Hard => {
                    let vote = argmax(matrix.proba(j, i));
                    acc[vote] = acc[vote] + T::one();
                }
            }
        }
        // dividing by the member count would not change the argmax
        labels.push(argmax(&acc));
    }
    Ok(labels)
}

/// Validation accuracy of the combined ensemble prediction.
pub fn overall_accuracy<T: Scalar>(mask: &Chromosome, matrix: &PredictionMatrix<T>, rule: VotingRule) -> Result<f64> {
    let predicted = ensemble_predict(mask, matrix, rule)?;
    if predicted.is_empty() {
        return Err(FedPaeError::input("accuracy over zero validation samples"));
    }
    let correct = predicted.iter().zip(matrix.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Precomputed member accuracies and pairwise diversities, so that
/// evaluating a mask costs O(k^2).
pub struct ObjectiveTable<T> {
    accuracies: Vec<T>,
    pairwise: Vec<T>,
    n: usize,
}

impl<T: Scalar> ObjectiveTable<T> {
    pub fn new(matrix: &PredictionMatrix<T>, measure: &dyn DiversityMeasure<T>) -> Result<Self> {
        let n = matrix.n_models();
        let accuracies = (0..n).map(|j| matrix.model_accuracy(j)).collect();
        let mut pairwise = vec![T::zero(); n * n];
        for a in 0..n {
            for b in a + 1..n {
                let d = measure.pairwise(matrix.column(a), matrix.column(b), matrix.n_classes())?;
                pairwise[a * n + b] = d;
                pairwise[b * n + a] = d;
            }
        }
        Ok(ObjectiveTable {
            accuracies,
            pairwise,
            n,
        })
    }

    pub fn accuracy(&self, model: usize) -> T {
        self.accuracies[model]
    }

    pub fn evaluate(&self, mask: &Chromosome) -> ObjectiveVector<T> {
        debug_assert_eq!(mask.len(), self.n);
        let m = mask.selected();
        let strength = m.iter().map(|&j| self.accuracies[j]).sum::<T>() / T::from_usize_lossy(m.len());
        let mut total = T::zero();
        let mut pairs = 0usize;
        for (x, &a) in m.iter().enumerate() {
            for &b in &m[x + 1..] {
                total = total + self.pairwise[a * self.n + b];
                pairs += 1;
            }
        }
        let diversity = if pairs == 0 {
            T::zero()
        } else {
            total / T::from_usize_lossy(pairs)
        };
        ObjectiveVector::new(strength, diversity)
    }
}
