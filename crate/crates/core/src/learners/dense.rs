//! Fully connected softmax networks. Logistic regression is the zero-hidden-layer case.

use rand::Rng as _;

use crate::rng::Rng;
use crate::scalar::{softmax_into, Scalar};

/// Layer widths `[n_features, hidden.., n_classes]`.
pub(crate) fn layer_sizes(n_features: usize, hidden: &[usize], n_classes: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(n_features);
    sizes.extend_from_slice(hidden);
    sizes.push(n_classes);
    sizes
}

pub(crate) fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub(crate) fn forward_flops(sizes: &[usize]) -> u64 {
    let macs: usize = sizes.windows(2).map(|w| 2 * w[0] * w[1] + w[1]).sum();
    // softmax: exp, sum and divide per class
    (macs + 3 * sizes[sizes.len() - 1]) as u64
}

/// Glorot-uniform weights, zero biases.
pub(crate) fn init_params<T: Scalar>(sizes: &[usize], rng: &mut Rng) -> Vec<T> {
    let mut params = Vec::with_capacity(param_count(sizes));
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push(T::lit(rng.random_range(-bound..bound)));
        }
        params.extend(std::iter::repeat_n(T::zero(), fan_out));
    }
    params
}

/// Scratch buffers for forward and backward passes over one network shape.
pub(crate) struct Workspace<T> {
    sizes: Vec<usize>,
    activations: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(sizes: &[usize]) -> Self {
        Workspace {
            sizes: sizes.to_vec(),
            activations: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            deltas: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            grad: vec![T::zero(); param_count(sizes)],
        }
    }

    /// Runs the network on `x`; the returned slice holds class probabilities.
    pub fn forward(&mut self, params: &[T], x: &[T]) -> &[T] {
        forward_into(&self.sizes, params, x, &mut self.activations);
        &self.activations[self.sizes.len() - 1]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Accumulates the cross-entropy gradient for one labeled sample.
    pub fn accumulate(&mut self, params: &[T], x: &[T], label: usize) {
        forward_into(&self.sizes, params, x, &mut self.activations);
        let last = self.sizes.len() - 1;
        for (c, d) in self.deltas[last].iter_mut().enumerate() {
            let p = self.activations[last][c];
            *d = if c == label { p - T::one() } else { p };
        }
        let mut offset = param_count(&self.sizes);
        for layer in (0..last).rev() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            offset -= n_in * n_out + n_out;
            let w_off = offset;
            let b_off = offset + n_in * n_out;
            for o in 0..n_out {
                let d = self.deltas[layer + 1][o];
                if d == T::zero() {
                    continue;
                }
                let row = &mut self.grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (g, &a) in row.iter_mut().zip(&self.activations[layer]) {
                    *g = *g + d * a;
                }
                self.grad[b_off + o] = self.grad[b_off + o] + d;
            }
            if layer > 0 {
                for i in 0..n_in {
                    // ReLU derivative: activations of hidden layers are post-ReLU
                    if self.activations[layer][i] <= T::zero() {
                        self.deltas[layer][i] = T::zero();
                        continue;
                    }
                    let mut s = T::zero();
                    for o in 0..n_out {
                        s = s + params[w_off + o * n_in + i] * self.deltas[layer + 1][o];
                    }
                    self.deltas[layer][i] = s;
                }
            }
        }
    }

    /// `params -= lr / batch * grad`.
    pub fn apply(&self, params: &mut [T], learning_rate: T, batch: usize) {
        let scale = learning_rate / T::from_usize_lossy(batch);
        for (p, &g) in params.iter_mut().zip(&self.grad) {
            *p = *p - scale * g;
        }
    }
}

fn forward_into<T: Scalar>(sizes: &[usize], params: &[T], x: &[T], acts: &mut [Vec<T>]) {
    acts[0].copy_from_slice(x);
    let last = sizes.len() - 1;
    let mut offset = 0;
    for layer in 0..last {
        let (n_in, n_out) = (sizes[layer], sizes[layer + 1]);
        let (w, rest) = params[offset..].split_at(n_in * n_out);
        let b = &rest[..n_out];
        offset += n_in * n_out + n_out;
        let (head, tail) = acts.split_at_mut(layer + 1);
        let input = &head[layer];
        let output = &mut tail[0];
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let z = row.iter().zip(input.iter()).fold(b[o], |s, (&wi, &xi)| s + wi * xi);
            output[o] = if layer + 1 < last && z < T::zero() {
                T::zero()
            } else {
                z
            };
        }
    }
    let logits = acts[last].clone();
    softmax_into(&logits, &mut acts[last]);
}

pub(crate) fn predict_into<T: Scalar>(sizes: &[usize], params: &[T], x: &[T], out: &mut [T]) {
    let mut acts: Vec<Vec<T>> = sizes.iter().map(|&n| vec![T::zero(); n]).collect();
    forward_into(sizes, params, x, &mut acts);
    out.copy_from_slice(&acts[sizes.len() - 1]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn loss(sizes: &[usize], params: &[f64], x: &[f64], label: usize) -> f64 {
        let mut out = vec![0.0; sizes[sizes.len() - 1]];
        predict_into(sizes, params, x, &mut out);
        -out[label].ln()
    }

    // central finite differences against the analytic gradient
    #[test]
    fn gradient_matches_finite_differences() {
        let sizes = layer_sizes(3, &[4, 3], 3);
        let mut rng = rng_from_seed(9);
        let mut params: Vec<f64> = init_params(&sizes, &mut rng);
        for p in params.iter_mut() {
            *p += 0.05;
        }
        let x = [0.3, -1.2, 0.8];
        let mut ws = Workspace::new(&sizes);
        ws.zero_grad();
        ws.accumulate(&params, &x, 2);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let numeric = (loss(&sizes, &plus, &x, 2) - loss(&sizes, &minus, &x, 2)) / (2.0 * h);
            assert!(
                (numeric - ws.grad[i]).abs() < 1e-5,
                "param {i}: numeric {numeric} vs analytic {}",
                ws.grad[i]
            );
        }
    }
}
