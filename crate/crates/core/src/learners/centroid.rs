//! Nearest-centroid classifier: softmax over negative Euclidean distances.
//!
//! Parameter layout: `n_classes * n_features` centroid coordinates followed by
//! one presence flag per class. Classes absent from training get probability 0.

use crate::data::Dataset;
use crate::scalar::{softmax_into, Scalar};

pub(super) fn fit<T: Scalar>(train: &Dataset<T>) -> Vec<T> {
    let (d, c) = (train.n_features(), train.n_classes());
    let mut sums = vec![T::zero(); c * d];
    let mut counts = vec![0usize; c];
    for (row, label) in train.rows() {
        counts[label] += 1;
        for (s, &x) in sums[label * d..(label + 1) * d].iter_mut().zip(row) {
            *s = *s + x;
        }
    }
    for (class, &n) in counts.iter().enumerate() {
        if n > 0 {
            let n = T::from_usize_lossy(n);
            for s in &mut sums[class * d..(class + 1) * d] {
                *s = *s / n;
            }
        }
    }
    sums.extend(counts.iter().map(|&n| if n > 0 { T::one() } else { T::zero() }));
    sums
}

pub(super) fn predict_into<T: Scalar>(params: &[T], n_features: usize, x: &[T], out: &mut [T]) {
    let n_classes = out.len();
    let flags = &params[n_classes * n_features..];
    let mut logits = Vec::with_capacity(n_classes);
    let mut present = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        if flags[class] > T::zero() {
            let centroid = &params[class * n_features..(class + 1) * n_features];
            let sq: T = centroid.iter().zip(x).map(|(&m, &v)| (v - m) * (v - m)).sum();
            logits.push(-sq.sqrt());
            present.push(class);
        }
    }
    out.iter_mut().for_each(|o| *o = T::zero());
    let mut probs = vec![T::zero(); logits.len()];
    softmax_into(&logits, &mut probs);
    for (&class, p) in present.iter().zip(probs) {
        out[class] = p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_at_centroid_dominates_when_centroids_are_far_apart() {
        let train = Dataset::new(vec![0.0, 0.0, 20.0, 20.0], vec![0, 1], 2, 2).unwrap();
        let params = fit(&train);
        let mut out = [0.0; 2];
        predict_into(&params, 2, &[0.0, 0.0], &mut out);
        assert!(out[0] > 0.99);
    }

    #[test]
    fn absent_class_gets_zero_probability() {
        let train = Dataset::new(vec![0.0, 1.0], vec![0, 2], 1, 3).unwrap();
        let params = fit(&train);
        let mut out = [0.0f64; 3];
        predict_into(&params, 1, &[0.5], &mut out);
        assert_eq!(out[1], 0.0);
        assert!((out[0] - 0.5).abs() < 1e-12 && (out[2] - 0.5).abs() < 1e-12);
    }
}
