//! Synchronous FedAvg: broadcast, one local mini-batch step per client,
//! sample-count-weighted parameter average.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dense::{self, Workspace};
use super::{Architecture, LearnerSpec, Origin, Predictor};
use crate::data::Dataset;
use crate::error::{FedPaeError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;

pub struct FedAvgClient<'a, T> {
    pub train: &'a Dataset<T>,
    pub architecture: Architecture,
    /// Seeds this client's mini-batch order.
    pub batch_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedAvgReport {
    pub rounds: usize,
    pub training_flops: u64,
}

/// Endless stream of mini-batches, reshuffled at every pass over the data.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    pass: u64,
    seed: u64,
    batch_size: usize,
}

impl BatchStream {
    fn new(n: usize, seed: u64, batch_size: usize) -> Self {
        BatchStream {
            order: (0..n).collect(),
            cursor: n,
            pass: 0,
            seed,
            batch_size,
        }
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.cursor >= self.order.len() {
            self.pass += 1;
            self.order.sort_unstable();
            self.order
                .shuffle(&mut rng_from_seed(derive_seed(self.seed, "sgd-pass", self.pass, 0)));
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = &self.order[self.cursor..end];
        self.cursor = end;
        batch
    }
}

fn sgd_step<T: Scalar>(params: &mut [T], ws: &mut Workspace<T>, data: &Dataset<T>, batch: &[usize], lr: T) {
    ws.zero_grad();
    for &i in batch {
        ws.accumulate(params, data.row(i), data.labels()[i]);
    }
    ws.apply(params, lr, batch.len());
}

fn shape_of<T: Scalar>(spec: &LearnerSpec, data: &Dataset<T>) -> Result<Vec<usize>> {
    spec.validate()?;
    let hidden: &[usize] = match &spec.architecture {
        Architecture::LogisticRegression => &[],
        Architecture::Mlp { hidden } => hidden,
        other => {
            return Err(FedPaeError::input(format!(
                "parameter averaging needs a gradient-trained architecture, got {}",
                other.name()
            )))
        }
    };
    Ok(dense::layer_sizes(data.n_features(), hidden, data.n_classes()))
}

/// Plain mini-batch SGD for `steps` steps from the same initialization FedAvg uses.
pub fn local_sgd_steps<T: Scalar>(
    train: &Dataset<T>,
    spec: &LearnerSpec,
    batch_seed: u64,
    steps: usize,
) -> Result<Predictor<T>> {
    if train.is_empty() {
        return Err(FedPaeError::input("empty training set"));
    }
    let sizes = shape_of(spec, train)?;
    let mut params: Vec<T> = dense::init_params(&sizes, &mut rng_from_seed(derive_seed(spec.seed, "init", 0, 0)));
    let mut ws = Workspace::new(&sizes);
    let mut stream = BatchStream::new(train.len(), batch_seed, spec.batch_size);
    let lr = T::lit(spec.learning_rate);
    for _ in 0..steps {
        let batch = stream.next_batch().to_vec();
        sgd_step(&mut params, &mut ws, train, &batch, lr);
    }
    Predictor::from_parts(
        spec.architecture.clone(),
        train.n_features(),
        train.n_classes(),
        params,
        Origin::default(),
    )
}

pub fn fedavg_train<T: Scalar>(
    clients: &[FedAvgClient<'_, T>],
    shared: &LearnerSpec,
    rounds: usize,
) -> Result<(Predictor<T>, FedAvgReport)> {
    let first = clients
        .first()
        .ok_or_else(|| FedPaeError::input("FedAvg needs at least one client"))?;
    if rounds == 0 {
        return Err(FedPaeError::config("rounds", "must be at least 1"));
    }
    if let Some(c) = clients.iter().find(|c| c.architecture != shared.architecture) {
        return Err(FedPaeError::input(format!(
            "FedAvg requires homogeneous models: client architecture {} differs from shared {}",
            c.architecture.name(),
            shared.architecture.name()
        )));
    }
    let sizes = shape_of(shared, first.train)?;
    for c in clients {
        if c.train.is_empty() {
            return Err(FedPaeError::input("FedAvg client with empty training set"));
        }
        if c.train.n_features() != first.train.n_features() || c.train.n_classes() != first.train.n_classes() {
            return Err(FedPaeError::input("FedAvg clients disagree on data shape"));
        }
    }

    let total: usize = clients.iter().map(|c| c.train.len()).sum();
    let weights: Vec<T> = clients
        .iter()
        .map(|c| T::from_usize_lossy(c.train.len()) / T::from_usize_lossy(total))
        .collect();
    let mut global: Vec<T> = dense::init_params(&sizes, &mut rng_from_seed(derive_seed(shared.seed, "init", 0, 0)));
    let mut streams: Vec<BatchStream> = clients
        .iter()
        .map(|c| BatchStream::new(c.train.len(), c.batch_seed, shared.batch_size))
        .collect();
    let mut ws = Workspace::new(&sizes);
    let mut local = global.clone();
    let mut next = vec![T::zero(); global.len()];
    let lr = T::lit(shared.learning_rate);
    let mut samples_seen = 0u64;

    for _ in 0..rounds {
        next.iter_mut().for_each(|v| *v = T::zero());
        for ((client, stream), &w) in clients.iter().zip(&mut streams).zip(&weights) {
            local.copy_from_slice(&global);
            let batch = stream.next_batch().to_vec();
            samples_seen += batch.len() as u64;
            sgd_step(&mut local, &mut ws, client.train, &batch, lr);
            for (n, &p) in next.iter_mut().zip(&local) {
                *n = *n + w * p;
            }
        }
        std::mem::swap(&mut global, &mut next);
    }
    let predictor = Predictor::from_parts(
        shared.architecture.clone(),
        first.train.n_features(),
        first.train.n_classes(),
        global,
        Origin::default(),
    )?;
    Ok((
        predictor,
        FedAvgReport {
            rounds,
            training_flops: 3 * dense::forward_flops(&sizes) * samples_seen,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn data(seed: u64) -> Dataset<f64> {
        generate_synthetic(&SyntheticSpec {
            n_classes: 3,
            n_features: 4,
            n_samples: 90,
            class_separation: 3.0,
            noise_scale: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn single_client_equals_local_sgd_bitwise() {
        let d = data(1);
        let spec = LearnerSpec::new(Architecture::Mlp { hidden: vec![6] }, 4);
        let client = FedAvgClient {
            train: &d,
            architecture: spec.architecture.clone(),
            batch_seed: 17,
        };
        let (fed, _) = fedavg_train(&[client], &spec, 37).unwrap();
        let solo = local_sgd_steps(&d, &spec, 17, 37).unwrap();
        assert!(fed
            .params()
            .iter()
            .zip(solo.params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn identical_clients_follow_the_solo_trajectory() {
        let d = data(2);
        let spec = LearnerSpec::new(Architecture::LogisticRegression, 5);
        let mk = || FedAvgClient {
            train: &d,
            architecture: Architecture::LogisticRegression,
            batch_seed: 3,
        };
        let (fed, _) = fedavg_train(&[mk(), mk()], &spec, 25).unwrap();
        let solo = local_sgd_steps(&d, &spec, 3, 25).unwrap();
        assert_eq!(fed.params(), solo.params());
    }

    #[test]
    fn heterogeneous_or_non_dense_models_are_rejected() {
        let d = data(3);
        let spec = LearnerSpec::new(Architecture::LogisticRegression, 0);
        let clients = [
            FedAvgClient {
                train: &d,
                architecture: Architecture::LogisticRegression,
                batch_seed: 0,
            },
            FedAvgClient {
                train: &d,
                architecture: Architecture::Mlp { hidden: vec![3] },
                batch_seed: 0,
            },
        ];
        assert!(matches!(fedavg_train(&clients, &spec, 1), Err(FedPaeError::Input(_))));
        let spec = LearnerSpec::new(Architecture::NearestCentroid, 0);
        let clients = [FedAvgClient {
            train: &d,
            architecture: Architecture::NearestCentroid,
            batch_seed: 0,
        }];
        assert!(fedavg_train(&clients, &spec, 1).is_err());
    }
}
