//! Model benches, ensemble objectives and final ensemble selection.

mod matrix;
mod objectives;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use matrix::PredictionMatrix;
pub use objectives::{
    diversity, ensemble_predict, overall_accuracy, pairwise_diversity, strength, CorrelationDiversity,
    DisagreementDiversity, DiversityKind, DiversityMeasure, ObjectiveTable, VotingRule,
};

use crate::data::Dataset;
use crate::error::{FedPaeError, Result};
use crate::learners::{encode_predictor, Architecture, Predictor};
use crate::moo::{evolve, Chromosome, NsgaConfig, ObjectiveVector, ParetoFront};
use crate::rng::content_hash;
use crate::scalar::{round_sig, Scalar};

/// Largest number of subsets [`exhaustive_oracle`] will enumerate.
pub const ORACLE_LIMIT: u128 = 1_000_000;

/// Globally unique model identity: who trained it, in which slot, and a hash
/// of its serialized form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelId {
    pub origin_client: u32,
    pub slot: u32,
    pub content_hash: u64,
}

impl ModelId {
    pub fn of<T: Scalar>(predictor: &Predictor<T>) -> Self {
        let origin = predictor.origin();
        ModelId {
            origin_client: origin.client_id,
            slot: origin.slot,
            content_hash: content_hash(&encode_predictor(predictor)),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}-s{}-{:016x}", self.origin_client, self.slot, self.content_hash)
    }
}

impl FromStr for ModelId {
    type Err = FedPaeError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FedPaeError::input(format!("malformed model id `{s}`"));
        let mut parts = s.splitn(3, '-');
        let client = parts.next().and_then(|p| p.strip_prefix('c')).ok_or_else(bad)?;
        let slot = parts.next().and_then(|p| p.strip_prefix('s')).ok_or_else(bad)?;
        let hash = parts.next().ok_or_else(bad)?;
        Ok(ModelId {
            origin_client: client.parse().map_err(|_| bad())?,
            slot: slot.parse().map_err(|_| bad())?,
            content_hash: u64::from_str_radix(hash, 16).map_err(|_| bad())?,
        })
    }
}

impl Serialize for ModelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub id: ModelId,
    pub architecture: Architecture,
    /// Whether the bench owner trained this model.
    pub is_local: bool,
}

impl ModelDescriptor {
    pub fn origin_client(&self) -> u32 {
        self.id.origin_client
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    /// Keep every received predictor.
    #[default]
    FullModels,
    /// Keep only each model's predictions on the owner's validation set
    /// (plus the owner's own predictors, which it needs for inference).
    PredictionsOnly,
}

#[derive(Debug, Clone)]
pub struct BenchEntry<T> {
    pub descriptor: ModelDescriptor,
    pub predictor: Option<Arc<Predictor<T>>>,
    pub column: Option<Vec<T>>,
}

/// The models (or model predictions) a client can draw its ensemble from.
///
/// Entries are kept sorted by model id so the bench order does not depend
/// on message arrival order.
#[derive(Debug, Clone)]
pub struct ModelBench<T> {
    owner: u32,
    storage_mode: StorageMode,
    entries: Vec<BenchEntry<T>>,
}

impl<T: Scalar> ModelBench<T> {
    pub fn new(owner: u32, storage_mode: StorageMode) -> Self {
        ModelBench {
            owner,
            storage_mode,
            entries: Vec::new(),
        }
    }

    pub fn owner(&self) -> u32 {
        self.owner
    }

    pub fn storage_mode(&self) -> StorageMode {
        self.storage_mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BenchEntry<T>] {
        &self.entries
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ModelDescriptor> {
        self.entries.iter().map(|e| &e.descriptor)
    }

    pub fn local_count(&self) -> usize {
        self.entries.iter().filter(|e| e.descriptor.is_local).count()
    }

    pub fn position(&self, id: &ModelId) -> Option<usize> {
        self.entries.binary_search_by(|e| e.descriptor.id.cmp(id)).ok()
    }

    pub fn predictor(&self, id: &ModelId) -> Option<&Arc<Predictor<T>>> {
        self.position(id).and_then(|i| self.entries[i].predictor.as_ref())
    }

    fn insert(&mut self, entry: BenchEntry<T>) -> bool {
        match self
            .entries
            .binary_search_by(|e| e.descriptor.id.cmp(&entry.descriptor.id))
        {
            Ok(_) => false,
            Err(at) => {
                self.entries.insert(at, entry);
                true
            }
        }
    }

    /// Adds a trained or received model. In predictions-only mode a peer
    /// model is evaluated on `val` immediately and then dropped. Returns
    /// `false` if the model is already on the bench.
    pub fn add_model(&mut self, predictor: Predictor<T>, val: &Dataset<T>) -> Result<bool> {
        let id = ModelId::of(&predictor);
        let is_local = id.origin_client == self.owner;
        let descriptor = ModelDescriptor {
            id,
            architecture: predictor.architecture().clone(),
            is_local,
        };
        let entry = match self.storage_mode {
            StorageMode::FullModels => BenchEntry {
                descriptor,
                predictor: Some(Arc::new(predictor)),
                column: None,
            },
            StorageMode::PredictionsOnly => {
                let column = predictor.predict_dataset(val)?;
                BenchEntry {
                    descriptor,
                    predictor: is_local.then(|| Arc::new(predictor)),
                    column: Some(column),
                }
            }
        };
        Ok(self.insert(entry))
    }

    /// Adds a peer model known only through its validation predictions.
    pub fn add_predictions(&mut self, descriptor: ModelDescriptor, column: Vec<T>) -> Result<bool> {
        if self.storage_mode != StorageMode::PredictionsOnly {
            return Err(FedPaeError::input(
                "prediction columns are only accepted by predictions-only benches",
            ));
        }
        if descriptor.is_local != (descriptor.id.origin_client == self.owner) {
            return Err(FedPaeError::Integrity {
                model_id: descriptor.id.to_string(),
                reason: format!("locality flag disagrees with bench owner {}", self.owner),
            });
        }
        Ok(self.insert(BenchEntry {
            descriptor,
            predictor: None,
            column: Some(column),
        }))
    }

    /// Attaches the full predictor to an entry that so far only had
    /// predictions, after checking it is the same model.
    pub fn attach_predictor(&mut self, predictor: Predictor<T>) -> Result<()> {
        let id = ModelId::of(&predictor);
        let at = self.position(&id).ok_or_else(|| FedPaeError::Integrity {
            model_id: id.to_string(),
            reason: "model is not on the bench".into(),
        })?;
        self.entries[at].predictor = Some(Arc::new(predictor));
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_count() == 0 {
            return Err(FedPaeError::input(format!(
                "bench of client {} holds no local model",
                self.owner
            )));
        }
        Ok(())
    }
}

/// Prediction matrix of every bench model over `val`, in bench order.
pub fn materialize_predictions<T: Scalar>(bench: &ModelBench<T>, val: &Dataset<T>) -> Result<PredictionMatrix<T>> {
    let expected = val.len() * val.n_classes();
    let columns = bench
        .entries
        .iter()
        .map(|e| match (&e.column, &e.predictor) {
            (Some(col), _) if col.len() != expected => Err(FedPaeError::Integrity {
                model_id: e.descriptor.id.to_string(),
                reason: format!(
                    "stored prediction column has {} values, validation set needs {expected}",
                    col.len()
                ),
            }),
            (Some(col), _) => Ok(col.clone()),
            (None, Some(p)) => p.predict_dataset(val),
            (None, None) => Err(FedPaeError::Integrity {
                model_id: e.descriptor.id.to_string(),
                reason: "entry has neither predictor nor predictions".into(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionMatrix::from_columns(columns, val.labels().to_vec(), val.n_classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub ensemble_size: usize,
    pub diversity: DiversityKind,
    pub voting: VotingRule,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            ensemble_size: 5,
            diversity: DiversityKind::Correlation,
            voting: VotingRule::Soft,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSelection<T> {
    pub chosen_mask: Chromosome,
    pub chosen_model_ids: Vec<ModelId>,
    pub val_accuracy: f64,
    /// Share of chosen models trained by the bench owner.
    pub local_fraction: f64,
    pub chosen_objectives: ObjectiveVector<T>,
    pub pareto_front: ParetoFront<T>,
    /// Overall validation accuracy of each Pareto entry, in front order.
    pub front_accuracies: Vec<f64>,
    pub pf_size: usize,
    /// False when the safeguard candidate beat every Pareto entry.
    pub chosen_on_front: bool,
    pub local_preference_mask: Chromosome,
    pub local_preference_accuracy: f64,
    pub evaluations: usize,
}

impl<T: Scalar> EnsembleSelection<T> {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mask": self.chosen_mask.to_string(),
            "model_ids": self.chosen_model_ids.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            "val_accuracy": round_sig(self.val_accuracy),
            "local_fraction": round_sig(self.local_fraction),
            "pf_size": self.pf_size,
        })
    }

    pub fn pareto_jsonl(&self) -> String {
        self.pareto_front.to_jsonl(|mask| {
            self.pareto_front
                .entries
                .iter()
                .position(|e| &e.chromosome == mask)
                .map(|i| self.front_accuracies[i])
        })
    }
}

/// The `k` most accurate local models, padded with the most accurate peer
/// models when the owner has fewer than `k`. Ties go to the lower index.
pub fn local_preference_mask(accuracies: &[f64], is_local: &[bool], k: usize) -> Result<Chromosome> {
    if accuracies.len() != is_local.len() || k == 0 || k > accuracies.len() {
        return Err(FedPaeError::input(format!(
            "cannot pick {k} of {} models",
            accuracies.len()
        )));
    }
    let ranked = |local: bool| {
        let mut idx: Vec<usize> = (0..accuracies.len()).filter(|&i| is_local[i] == local).collect();
        idx.sort_by(|&a, &b| accuracies[b].total_cmp(&accuracies[a]).then(a.cmp(&b)));
        idx
    };
    let picks: Vec<usize> = ranked(true).into_iter().chain(ranked(false)).take(k).collect();
    Chromosome::from_indices(accuracies.len(), &picks)
}

/// Score used by the final pick: correct count, local count, then the mask
/// itself (smaller is better).
#[derive(Debug, Clone, PartialEq, Eq)]
struct PickKey {
    correct: usize,
    local: usize,
    mask: Chromosome,
}

impl PickKey {
    fn new<T: Scalar>(
        mask: &Chromosome,
        matrix: &PredictionMatrix<T>,
        is_local: &[bool],
        voting: VotingRule,
    ) -> Result<Self> {
        let predicted = ensemble_predict(mask, matrix, voting)?;
        Ok(PickKey {
            correct: predicted.iter().zip(matrix.labels()).filter(|(p, l)| p == l).count(),
            local: mask.selected().iter().filter(|&&i| is_local[i]).count(),
            mask: mask.clone(),
        })
    }

    /// `Greater` means `self` is the better pick.
    fn compare(&self, other: &Self) -> Ordering {
        self.correct
            .cmp(&other.correct)
            .then(self.local.cmp(&other.local))
            .then(other.mask.cmp(&self.mask))
    }
}

fn accuracy_of(correct: usize, n: usize) -> f64 {
    correct as f64 / n as f64
}

/// Chooses an ensemble from a materialized bench: NSGA-II over (strength,
/// diversity) seeded with the local-preference mask, then the most accurate
/// candidate among the Pareto front and the seed.
pub fn select_from_matrix<T: Scalar>(
    matrix: &PredictionMatrix<T>,
    descriptors: &[ModelDescriptor],
    config: &SelectionConfig,
    nsga: &NsgaConfig,
) -> Result<EnsembleSelection<T>> {
    let k = config.ensemble_size;
    let n = matrix.n_models();
    if descriptors.len() != n {
        return Err(FedPaeError::input(format!(
            "{} descriptors for {n} prediction columns",
            descriptors.len()
        )));
    }
    if k == 0 || n < k {
        return Err(FedPaeError::input(format!(
            "bench of {n} models cannot supply an ensemble of {k}"
        )));
    }
    if matrix.n_samples() == 0 {
        return Err(FedPaeError::input("ensemble selection needs validation samples"));
    }
    let is_local: Vec<bool> = descriptors.iter().map(|d| d.is_local).collect();
    if !is_local.contains(&true) {
        return Err(FedPaeError::input("bench holds no local model"));
    }
    let measure = config.diversity.measure::<T>();
    let table = ObjectiveTable::new(matrix, measure.as_ref())?;
    let accuracies: Vec<f64> = (0..n).map(|j| table.accuracy(j).as_f64()).collect();
    let seed = local_preference_mask(&accuracies, &is_local, k)?;

    let evolution = evolve(
        nsga,
        n,
        k,
        &|m: &Chromosome| table.evaluate(m),
        std::slice::from_ref(&seed),
    )?;
    let front = evolution.front;

    let front_keys = front
        .entries
        .iter()
        .map(|e| PickKey::new(&e.chromosome, matrix, &is_local, config.voting))
        .collect::<Result<Vec<_>>>()?;
    let seed_key = PickKey::new(&seed, matrix, &is_local, config.voting)?;
    let best = front_keys
        .iter()
        .chain(std::iter::once(&seed_key))
        .max_by(|a, b| a.compare(b))
        .expect("candidate set includes the seed")
        .clone();

    let samples = matrix.n_samples();
    let chosen_on_front = front.contains(&best.mask);
    let chosen_model_ids = best.mask.selected().iter().map(|&i| descriptors[i].id).collect();
    let chosen_objectives = table.evaluate(&best.mask);
    Ok(EnsembleSelection {
        val_accuracy: accuracy_of(best.correct, samples),
        local_fraction: best.local as f64 / k as f64,
        chosen_model_ids,
        chosen_objectives,
        front_accuracies: front_keys.iter().map(|key| accuracy_of(key.correct, samples)).collect(),
        pf_size: front.len(),
        pareto_front: front,
        chosen_on_front,
        local_preference_accuracy: accuracy_of(seed_key.correct, samples),
        local_preference_mask: seed,
        chosen_mask: best.mask,
        evaluations: evolution.evaluations,
    })
}

/// Materializes the bench predictions on `val` and selects an ensemble.
pub fn select_ensemble<T: Scalar>(
    bench: &ModelBench<T>,
    val: &Dataset<T>,
    config: &SelectionConfig,
    nsga: &NsgaConfig,
) -> Result<EnsembleSelection<T>> {
    bench.validate()?;
    let matrix = materialize_predictions(bench, val)?;
    let descriptors: Vec<ModelDescriptor> = bench.descriptors().cloned().collect();
    select_from_matrix(&matrix, &descriptors, config, nsga)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub mask: Chromosome,
    pub val_accuracy: f64,
    pub local_fraction: f64,
    pub masks_evaluated: u64,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Best cardinality-`k` mask by overall validation accuracy, found by
/// enumerating every subset. Ties are broken as in the final pick.
pub fn exhaustive_oracle<T: Scalar>(
    matrix: &PredictionMatrix<T>,
    is_local: &[bool],
    k: usize,
    voting: VotingRule,
) -> Result<OracleResult> {
    let n = matrix.n_models();
    if is_local.len() != n || k == 0 || k > n {
        return Err(FedPaeError::input(format!("cannot pick {k} of {n} models")));
    }
    if matrix.n_samples() == 0 {
        return Err(FedPaeError::input("oracle needs validation samples"));
    }
    let subsets = binomial(n, k);
    if subsets > ORACLE_LIMIT {
        return Err(FedPaeError::SearchTooLarge {
            subsets,
            limit: ORACLE_LIMIT,
        });
    }
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best: Option<PickKey> = None;
    let mut evaluated = 0u64;
    loop {
        let mask = Chromosome::from_indices(n, &combo)?;
        let key = PickKey::new(&mask, matrix, is_local, voting)?;
        evaluated += 1;
        if best.as_ref().is_none_or(|b| key.compare(b) == Ordering::Greater) {
            best = Some(key);
        }
        // advance to the next combination in lexicographic index order
        let Some(i) = (0..k).rev().find(|&i| combo[i] != i + n - k) else {
            break;
        };
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
    let best = best.expect("at least one subset");
    Ok(OracleResult {
        val_accuracy: accuracy_of(best.correct, matrix.n_samples()),
        local_fraction: best.local as f64 / k as f64,
        mask: best.mask,
        masks_evaluated: evaluated,
    })
}
