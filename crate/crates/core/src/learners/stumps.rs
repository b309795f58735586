//! Bagged decision stumps with majority-vote probabilities.
//!
//! Each stump stores `[feature, threshold, left_class, right_class]`; a sample
//! goes left when `x[feature] < threshold`.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::data::Dataset;
use crate::rng::Rng;
use crate::scalar::Scalar;

const MAX_THRESHOLDS: usize = 16;

fn majority(hist: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in hist.iter().enumerate() {
        if n > hist[best] {
            best = c;
        }
    }
    best
}

fn gini(hist: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - hist.iter().map(|&n| (n as f64 / t).powi(2)).sum::<f64>()
}

/// Returns the flat parameters and an estimate of the FLOPs spent fitting.
pub(super) fn fit<T: Scalar>(train: &Dataset<T>, n_stumps: usize, rng: &mut Rng) -> (Vec<T>, u64) {
    let (n, d, c) = (train.len(), train.n_features(), train.n_classes());
    let n_try = ((d as f64).sqrt().round() as usize).clamp(1, d);
    let mut params = Vec::with_capacity(4 * n_stumps);
    let mut flops = 0u64;
    let mut overall = vec![0usize; c];
    for &l in train.labels() {
        overall[l] += 1;
    }
    let fallback = majority(&overall);

    for _ in 0..n_stumps {
        let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let features = sample(rng, d, n_try).into_vec();
        let mut best: Option<(f64, usize, T)> = None;
        for &f in &features {
            let mut values: Vec<(T, usize)> = boot.iter().map(|&i| (train.row(i)[f], train.labels()[i])).collect();
            values.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            let step = (n / MAX_THRESHOLDS).max(1);
            let mut left = vec![0usize; c];
            let mut right = vec![0usize; c];
            for &(_, l) in &values {
                right[l] += 1;
            }
            let mut split = 0;
            let mut cut = step;
            while cut < n {
                while split < cut {
                    let l = values[split].1;
                    left[l] += 1;
                    right[l] -= 1;
                    split += 1;
                }
                if values[cut - 1].0 < values[cut].0 {
                    let impurity =
                        (cut as f64 * gini(&left, cut) + (n - cut) as f64 * gini(&right, n - cut)) / n as f64;
                    let threshold = (values[cut - 1].0 + values[cut].0) / T::lit(2.0);
                    if best.is_none_or(|(b, _, _)| impurity < b) {
                        best = Some((impurity, f, threshold));
                    }
                }
                cut += step;
            }
            flops += (n as f64 * (n as f64).log2().max(1.0)) as u64 + (c * MAX_THRESHOLDS) as u64;
        }
        match best {
            Some((_, f, threshold)) => {
                let mut left = vec![0usize; c];
                let mut right = vec![0usize; c];
                for &i in &boot {
                    if train.row(i)[f] < threshold {
                        left[train.labels()[i]] += 1;
                    } else {
                        right[train.labels()[i]] += 1;
                    }
                }
                params.push(T::from_usize_lossy(f));
                params.push(threshold);
                params.push(T::from_usize_lossy(majority(&left)));
                params.push(T::from_usize_lossy(majority(&right)));
            }
            None => {
                // every tried feature was constant on the bootstrap sample
                let mut hist = vec![0usize; c];
                for &i in &boot {
                    hist[train.labels()[i]] += 1;
                }
                let class = if boot.is_empty() { fallback } else { majority(&hist) };
                params.extend([
                    T::zero(),
                    T::infinity(),
                    T::from_usize_lossy(class),
                    T::from_usize_lossy(class),
                ]);
            }
        }
    }
    (params, flops)
}

pub(super) fn predict_into<T: Scalar>(params: &[T], x: &[T], out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    let n_classes = out.len();
    let n_stumps = params.len() / 4;
    for stump in params.chunks_exact(4) {
        let feature = stump[0].to_usize().unwrap_or(0).min(x.len() - 1);
        let side = if x[feature] < stump[1] { stump[2] } else { stump[3] };
        let class = side.to_usize().unwrap_or(0).min(n_classes - 1);
        out[class] = out[class] + T::one();
    }
    let total = T::from_usize_lossy(n_stumps);
    for o in out.iter_mut() {
        *o = *o / total;
    }
}
