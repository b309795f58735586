//! Lightweight heterogeneous base classifiers with early-stopped training,
//! plus a synchronous parameter-averaging baseline.

mod centroid;
mod codec;
mod dense;
mod fedavg;
mod stumps;

pub use codec::{decode_predictor, encode_predictor, PREDICTOR_FORMAT_VERSION, PREDICTOR_MAGIC};
pub use fedavg::{fedavg_train, local_sgd_steps, FedAvgClient, FedAvgReport};

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FedPaeError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::{argmax, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    LogisticRegression,
    Mlp {
        hidden: Vec<usize>,
    },
    NearestCentroid,
    StumpForest {
        n_stumps: usize,
    },
    /// Fixed probability vector; produced for single-class training sets.
    Constant,
}

impl Architecture {
    pub fn tag(&self) -> u8 {
        match self {
            Architecture::LogisticRegression => 0,
            Architecture::Mlp { .. } => 1,
            Architecture::NearestCentroid => 2,
            Architecture::StumpForest { .. } => 3,
            Architecture::Constant => 4,
        }
    }

    /// Short stable name, e.g. `mlp(64,32)`.
    pub fn name(&self) -> String {
        match self {
            Architecture::LogisticRegression => "logistic".to_string(),
            Architecture::Mlp { hidden } => format!(
                "mlp({})",
                hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            ),
            Architecture::NearestCentroid => "nearest_centroid".to_string(),
            Architecture::StumpForest { n_stumps } => format!("stump_forest({n_stumps})"),
            Architecture::Constant => "constant".to_string(),
        }
    }

    /// Trained by gradient descent, and so eligible for parameter averaging.
    pub fn is_dense(&self) -> bool {
        matches!(self, Architecture::LogisticRegression | Architecture::Mlp { .. })
    }

    fn hidden(&self) -> &[usize] {
        match self {
            Architecture::Mlp { hidden } => hidden,
            _ => &[],
        }
    }

    pub fn param_count(&self, n_features: usize, n_classes: usize) -> usize {
        match self {
            Architecture::LogisticRegression | Architecture::Mlp { .. } => {
                dense::param_count(&dense::layer_sizes(n_features, self.hidden(), n_classes))
            }
            Architecture::NearestCentroid => n_classes * n_features + n_classes,
            Architecture::StumpForest { n_stumps } => 4 * n_stumps,
            Architecture::Constant => n_classes,
        }
    }

    /// Floating-point operations for one forward pass on one sample.
    pub fn forward_flops(&self, n_features: usize, n_classes: usize) -> u64 {
        let (f, c) = (n_features as u64, n_classes as u64);
        match self {
            Architecture::LogisticRegression | Architecture::Mlp { .. } => {
                dense::forward_flops(&dense::layer_sizes(n_features, self.hidden(), n_classes))
            }
            // squared distance per centroid, then softmax
            Architecture::NearestCentroid => 3 * c * f + 4 * c,
            Architecture::StumpForest { n_stumps } => 2 * *n_stumps as u64 + c,
            Architecture::Constant => c,
        }
    }

    /// The five heterogeneous default slots.
    pub fn default_slots() -> Vec<Architecture> {
        vec![
            Architecture::LogisticRegression,
            Architecture::Mlp { hidden: vec![32] },
            Architecture::Mlp { hidden: vec![64, 32] },
            Architecture::NearestCentroid,
            Architecture::StumpForest { n_stumps: 50 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub architecture: Architecture,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation improvement before training stops.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_learning_rate() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    10
}
fn default_max_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    50
}

impl LearnerSpec {
    /// lr 0.01, batch 10, up to 500 epochs, patience 50.
    pub fn new(architecture: Architecture, seed: u64) -> Self {
        LearnerSpec {
            architecture,
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FedPaeError::config("learning_rate", "must be finite and > 0"));
        }
        if self.batch_size == 0 {
            return Err(FedPaeError::config("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(FedPaeError::config("max_epochs", "must be at least 1"));
        }
        if self.patience > self.max_epochs {
            return Err(FedPaeError::config("patience", "must not exceed max_epochs"));
        }
        match &self.architecture {
            Architecture::Mlp { hidden } if hidden.is_empty() || hidden.contains(&0) => Err(FedPaeError::config(
                "architecture",
                "mlp hidden sizes must be non-empty and positive",
            )),
            Architecture::StumpForest { n_stumps: 0 } => Err(FedPaeError::config(
                "architecture",
                "stump forest needs at least one stump",
            )),
            _ => Ok(()),
        }
    }
}

/// Where a predictor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Origin {
    pub client_id: u32,
    pub slot: u32,
    pub training_seed: u64,
}

/// A trained, immutable classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor<T> {
    architecture: Architecture,
    n_features: usize,
    n_classes: usize,
    params: Vec<T>,
    origin: Origin,
}

impl<T: Scalar> Predictor<T> {
    pub fn from_parts(
        architecture: Architecture,
        n_features: usize,
        n_classes: usize,
        params: Vec<T>,
        origin: Origin,
    ) -> Result<Self> {
        let expected = architecture.param_count(n_features, n_classes);
        if params.len() != expected {
            return Err(FedPaeError::input(format!(
                "{} expects {expected} parameters, got {}",
                architecture.name(),
                params.len()
            )));
        }
        if n_classes < 2 || n_features == 0 {
            return Err(FedPaeError::input("predictor needs >= 2 classes and >= 1 feature"));
        }
        Ok(Predictor {
            architecture,
            n_features,
            n_classes,
            params,
            origin,
        })
    }

    /// A predictor that ignores its input and emits `probs`.
    pub fn constant(probs: Vec<T>, n_features: usize, origin: Origin) -> Result<Self> {
        let n_classes = probs.len();
        Self::from_parts(Architecture::Constant, n_features, n_classes, probs, origin)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }
    pub fn n_features(&self) -> usize {
        self.n_features
    }
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
    pub fn params(&self) -> &[T] {
        &self.params
    }
    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn forward_flops(&self) -> u64 {
        self.architecture.forward_flops(self.n_features, self.n_classes)
    }

    /// Class probabilities for one feature vector.
    pub fn predict_proba(&self, features: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.n_classes];
        self.predict_proba_into(features, &mut out)?;
        Ok(out)
    }

    pub fn predict_proba_into(&self, features: &[T], out: &mut [T]) -> Result<()> {
        if features.len() != self.n_features {
            return Err(FedPaeError::input(format!(
                "predictor expects {} features, got {}",
                self.n_features,
                features.len()
            )));
        }
        match &self.architecture {
            Architecture::LogisticRegression | Architecture::Mlp { .. } => {
                let sizes = dense::layer_sizes(self.n_features, self.architecture.hidden(), self.n_classes);
                dense::predict_into(&sizes, &self.params, features, out);
            }
            Architecture::NearestCentroid => centroid::predict_into(&self.params, self.n_features, features, out),
            Architecture::StumpForest { .. } => stumps::predict_into(&self.params, features, out),
            Architecture::Constant => out.copy_from_slice(&self.params),
        }
        Ok(())
    }

    /// Probability rows for every sample of `data`, flattened sample-major.
    pub fn predict_dataset(&self, data: &Dataset<T>) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); data.len() * self.n_classes];
        for (i, (row, _)) in data.rows().enumerate() {
            self.predict_proba_into(row, &mut out[i * self.n_classes..(i + 1) * self.n_classes])?;
        }
        Ok(out)
    }

    pub fn predict_label(&self, features: &[T]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(features)?))
    }
}

/// Fraction of samples whose argmax prediction (lowest index on ties) equals the label.
pub fn accuracy<T: Scalar>(predictor: &Predictor<T>, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(FedPaeError::input("accuracy of an empty labeled set is undefined"));
    }
    let mut probs = vec![T::zero(); predictor.n_classes()];
    let mut correct = 0usize;
    for (row, label) in data.rows() {
        predictor.predict_proba_into(row, &mut probs)?;
        if argmax(&probs) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Validation accuracy of the parameters after the last epoch run.
    pub final_val_accuracy: f64,
    pub stopped_early: bool,
    pub training_flops: u64,
    /// The training set held a single class; a constant predictor was returned.
    pub single_class: bool,
}

fn check_dims<T: Scalar>(train: &Dataset<T>, val: &Dataset<T>) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(FedPaeError::input("training and validation sets must be non-empty"));
    }
    if train.n_features() != val.n_features() || train.n_classes() != val.n_classes() {
        return Err(FedPaeError::input(format!(
            "train shape ({} features, {} classes) differs from validation ({}, {})",
            train.n_features(),
            train.n_classes(),
            val.n_features(),
            val.n_classes()
        )));
    }
    Ok(())
}

/// Trains one model and returns the parameters with the best validation accuracy.
///
/// Gradient-trained architectures run mini-batch SGD on cross-entropy,
/// reshuffling each epoch from a seed derived from `(spec.seed, epoch)`, and
/// stop after `patience` epochs without a strict improvement. Ties keep the
/// earliest epoch.
pub fn train<T: Scalar>(
    spec: &LearnerSpec,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    origin: Origin,
) -> Result<(Predictor<T>, TrainReport)> {
    spec.validate()?;
    check_dims(train_set, val_set)?;
    let (n_features, n_classes) = (train_set.n_features(), train_set.n_classes());
    let first = train_set.labels()[0];
    if train_set.labels().iter().all(|&l| l == first) {
        warn!(
            "client {} slot {}: single-class training set, returning constant predictor",
            origin.client_id, origin.slot
        );
        let mut probs = vec![T::zero(); n_classes];
        probs[first] = T::one();
        let predictor = Predictor::constant(probs, n_features, origin)?;
        let best_val_accuracy = accuracy(&predictor, val_set)?;
        return Ok((
            predictor,
            TrainReport {
                epochs_run: 1,
                best_epoch: 1,
                best_val_accuracy,
                final_val_accuracy: best_val_accuracy,
                stopped_early: false,
                training_flops: 0,
                single_class: true,
            },
        ));
    }

    let single_pass = |predictor: Predictor<T>, flops: u64| -> Result<(Predictor<T>, TrainReport)> {
        let best_val_accuracy = accuracy(&predictor, val_set)?;
        Ok((
            predictor,
            TrainReport {
                epochs_run: 1,
                best_epoch: 1,
                best_val_accuracy,
                final_val_accuracy: best_val_accuracy,
                stopped_early: false,
                training_flops: flops,
                single_class: false,
            },
        ))
    };
    match &spec.architecture {
        Architecture::NearestCentroid => {
            let params = centroid::fit(train_set);
            let flops = (train_set.len() * n_features) as u64;
            single_pass(
                Predictor::from_parts(spec.architecture.clone(), n_features, n_classes, params, origin)?,
                flops,
            )
        }
        Architecture::StumpForest { n_stumps } => {
            let mut rng = rng_from_seed(derive_seed(spec.seed, "stumps", 0, 0));
            let (params, flops) = stumps::fit(train_set, *n_stumps, &mut rng);
            single_pass(
                Predictor::from_parts(spec.architecture.clone(), n_features, n_classes, params, origin)?,
                flops,
            )
        }
        Architecture::Constant => {
            let mut counts = vec![T::zero(); n_classes];
            for &l in train_set.labels() {
                counts[l] = counts[l] + T::one();
            }
            let n = T::from_usize_lossy(train_set.len());
            let probs = counts.into_iter().map(|c| c / n).collect();
            single_pass(Predictor::constant(probs, n_features, origin)?, train_set.len() as u64)
        }
        Architecture::LogisticRegression | Architecture::Mlp { .. } => train_dense(spec, train_set, val_set, origin),
    }
}

fn train_dense<T: Scalar>(
    spec: &LearnerSpec,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    origin: Origin,
) -> Result<(Predictor<T>, TrainReport)> {
    let (n_features, n_classes) = (train_set.n_features(), train_set.n_classes());
    let sizes = dense::layer_sizes(n_features, spec.architecture.hidden(), n_classes);
    let mut init_rng = rng_from_seed(derive_seed(spec.seed, "init", 0, 0));
    let mut params: Vec<T> = dense::init_params(&sizes, &mut init_rng);
    let mut ws = dense::Workspace::new(&sizes);
    let lr = T::lit(spec.learning_rate);

    let val_accuracy = |params: &[T], ws: &mut dense::Workspace<T>| -> f64 {
        let correct = val_set
            .rows()
            .filter(|(row, label)| argmax(ws.forward(params, row)) == *label)
            .count();
        correct as f64 / val_set.len() as f64
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best_params = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs_run = 0;
    let mut final_acc = 0.0;
    for epoch in 1..=spec.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed(spec.seed, "epoch", epoch as u64, 0)));
        for batch in order.chunks(spec.batch_size) {
            ws.zero_grad();
            for &i in batch {
                ws.accumulate(&params, train_set.row(i), train_set.labels()[i]);
            }
            ws.apply(&mut params, lr, batch.len());
        }
        epochs_run = epoch;
        let acc = val_accuracy(&params, &mut ws);
        final_acc = acc;
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
        } else if epoch - best_epoch >= spec.patience {
            break;
        }
    }
    let flops = 3 * dense::forward_flops(&sizes) * (epochs_run * train_set.len()) as u64;
    let predictor = Predictor::from_parts(spec.architecture.clone(), n_features, n_classes, best_params, origin)?;
    Ok((
        predictor,
        TrainReport {
            epochs_run,
            best_epoch,
            best_val_accuracy: best_acc,
            final_val_accuracy: final_acc,
            stopped_early: epochs_run < spec.max_epochs,
            training_flops: flops,
            single_class: false,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn blobs(noise: f64, n: usize, classes: usize, seed: u64) -> Dataset<f64> {
        generate_synthetic(&SyntheticSpec {
            n_classes: classes,
            n_features: 4,
            n_samples: n,
            class_separation: 6.0,
            noise_scale: noise,
            seed,
        })
        .unwrap()
    }

    fn halves(ds: &Dataset<f64>) -> (Dataset<f64>, Dataset<f64>) {
        let n = ds.len();
        let a: Vec<usize> = (0..n / 2).collect();
        let b: Vec<usize> = (n / 2..n).collect();
        (ds.subset(&a).unwrap(), ds.subset(&b).unwrap())
    }

    #[test]
    fn nearest_centroid_separates_noiseless_blobs() {
        let (tr, va) = halves(&blobs(0.0, 60, 3, 1));
        let spec = LearnerSpec::new(Architecture::NearestCentroid, 0);
        let (p, report) = train(&spec, &tr, &va, Origin::default()).unwrap();
        assert_eq!(report.best_val_accuracy, 1.0);
        assert_eq!(report.epochs_run, 1);
        assert_eq!(accuracy(&p, &va).unwrap(), 1.0);
    }

    #[test]
    fn logistic_stops_after_patience_once_validation_plateaus() {
        let (tr, va) = halves(&blobs(0.0, 100, 2, 2));
        let spec = LearnerSpec::new(Architecture::LogisticRegression, 3);
        let (_, report) = train(&spec, &tr, &va, Origin::default()).unwrap();
        assert_eq!(report.best_val_accuracy, 1.0);
        assert!(report.best_epoch <= 30, "plateau at {}", report.best_epoch);
        assert!(report.stopped_early);
        assert_eq!(report.epochs_run, report.best_epoch + 50);
        assert!(report.epochs_run <= 80);
    }

    #[test]
    fn mlp_training_is_bit_deterministic() {
        let (tr, va) = halves(&blobs(2.0, 80, 3, 4));
        let mut spec = LearnerSpec::new(Architecture::Mlp { hidden: vec![8] }, 11);
        spec.max_epochs = 20;
        spec.patience = 5;
        let (a, _) = train(&spec, &tr, &va, Origin::default()).unwrap();
        let (b, _) = train(&spec, &tr, &va, Origin::default()).unwrap();
        assert_eq!(encode_predictor(&a), encode_predictor(&b));
    }

    #[test]
    fn returned_snapshot_is_at_least_as_good_as_the_last_epoch() {
        let (tr, va) = halves(&blobs(4.0, 120, 3, 5));
        let mut spec = LearnerSpec::new(Architecture::Mlp { hidden: vec![16] }, 1);
        spec.max_epochs = 40;
        spec.patience = 10;
        let (best, report) = train(&spec, &tr, &va, Origin::default()).unwrap();
        assert_eq!(accuracy(&best, &va).unwrap(), report.best_val_accuracy);
        assert!(report.best_val_accuracy >= report.final_val_accuracy);
    }

    #[test]
    fn single_class_training_gives_constant_predictor() {
        let ds = blobs(1.0, 20, 2, 6);
        let zeros: Vec<usize> = (0..20).filter(|&i| ds.labels()[i] == 0).collect();
        let tr = ds.subset(&zeros).unwrap();
        let spec = LearnerSpec::new(Architecture::Mlp { hidden: vec![4] }, 0);
        let (p, report) = train(&spec, &tr, &ds, Origin::default()).unwrap();
        assert!(report.single_class);
        assert_eq!(p.architecture(), &Architecture::Constant);
        assert_eq!(accuracy(&p, &ds).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let tr = blobs(1.0, 20, 2, 6);
        let other = Dataset::new(vec![0.0; 6], vec![0, 1, 0], 2, 2).unwrap();
        let spec = LearnerSpec::new(Architecture::LogisticRegression, 0);
        assert!(matches!(
            train(&spec, &tr, &other, Origin::default()),
            Err(FedPaeError::Input(_))
        ));
        let (p, _) = train(&spec, &tr, &tr, Origin::default()).unwrap();
        assert!(p.predict_proba(&[0.0; 3]).is_err());
    }

    #[test]
    fn zero_weight_logistic_is_uniform() {
        let p = Predictor::<f64>::from_parts(Architecture::LogisticRegression, 3, 2, vec![0.0; 8], Origin::default())
            .unwrap();
        assert_eq!(p.predict_proba(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn accuracy_cases() {
        let ds = Dataset::new(vec![0.0; 4], vec![0, 0, 1, 1], 1, 2).unwrap();
        let c0 = Predictor::constant(vec![1.0, 0.0], 1, Origin::default()).unwrap();
        assert_eq!(accuracy(&c0, &ds).unwrap(), 0.5);
        let tie = Predictor::constant(vec![0.5, 0.5], 1, Origin::default()).unwrap();
        assert_eq!(accuracy(&tie, &ds).unwrap(), 0.5);
        let empty = ds.subset(&[]).unwrap();
        assert!(accuracy(&c0, &empty).is_err());
    }

    // binomial(10k, 0.1): sd = 0.003, so +-0.02 is more than six sigma
    #[test]
    fn label_independent_predictor_scores_one_in_ten() {
        let n = 10_000;
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let mut rng = rng_from_seed(77);
        let features: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = Dataset::new(features, labels, 2, 10).unwrap();
        let params: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = Predictor::from_parts(Architecture::LogisticRegression, 2, 10, params, Origin::default()).unwrap();
        let acc = accuracy(&p, &ds).unwrap();
        assert!((acc - 0.1).abs() < 0.02, "accuracy {acc}");
    }

    proptest! {
        #[test]
        fn probabilities_are_normalized(
            arch in prop_oneof![
                Just(Architecture::LogisticRegression),
                Just(Architecture::Mlp { hidden: vec![5, 3] }),
                Just(Architecture::NearestCentroid),
                Just(Architecture::StumpForest { n_stumps: 7 }),
            ],
            seed: u64,
            scale in 0.1f64..100.0,
        ) {
            let (n_features, n_classes) = (3, 4);
            let count = arch.param_count(n_features, n_classes);
            let mut rng = rng_from_seed(seed);
            let mut params: Vec<f64> = (0..count).map(|_| rng.random_range(-scale..scale)).collect();
            if let Architecture::StumpForest { .. } = arch {
                for s in params.chunks_mut(4) {
                    s[0] = rng.random_range(0..n_features) as f64;
                    s[2] = rng.random_range(0..n_classes) as f64;
                    s[3] = rng.random_range(0..n_classes) as f64;
                }
            }
            if let Architecture::NearestCentroid = arch {
                let flags = n_classes * n_features;
                for f in &mut params[flags..] {
                    *f = 1.0;
                }
            }
            let p = Predictor::from_parts(arch, n_features, n_classes, params, Origin::default()).unwrap();
            let x: Vec<f64> = (0..n_features).map(|_| rng.random_range(-scale..scale)).collect();
            let probs = p.predict_proba(&x).unwrap();
            let total: f64 = probs.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
