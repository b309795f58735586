use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_csv, read_dataset_cache, Dataset, SplitFractions, SyntheticSpec};
use crate::error::{FedPaeError, Result};
use crate::learners::{Architecture, LearnerSpec};
use crate::moo::NsgaConfig;
use crate::scalar::Scalar;
use crate::selection::{SelectionConfig, StorageMode};

/// Environment variable that replaces the configured master seed.
pub const SEED_ENV: &str = "FEDPAE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated from a `SyntheticSpec`; its `seed` is mixed with the master seed.
    Synthetic(SyntheticSpec),
    /// A `.csv` file, or the binary cache written by `fedpae gen`.
    File { path: PathBuf },
}

impl DatasetSource {
    pub fn load<T: Scalar>(&self, seed: u64) -> Result<Dataset<T>> {
        match self {
            DatasetSource::Synthetic(spec) => {
                let spec = SyntheticSpec { seed, ..spec.clone() };
                crate::data::generate_synthetic(&spec)
            }
            DatasetSource::File { path } => load_dataset_file(path),
        }
    }
}

pub fn load_dataset_file<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_dataset_cache(path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fedpae,
    LocalSingle,
    LocalEnsemble,
    Fedavg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fedpae => "fedpae",
            Method::LocalSingle => "local_single",
            Method::LocalEnsemble => "local_ensemble",
            Method::Fedavg => "fedavg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    /// TRAIN_DONE ticks are drawn from `0..=stagger`.
    pub stagger: u64,
    /// Ticks from a client's last TRAIN_DONE to its SELECT.
    pub settle_delay: u64,
    /// Ticks per link.
    pub latency: u64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        // settle_delay > stagger + latency: every bench is complete at SELECT
        ScheduleParams {
            stagger: 5,
            settle_delay: 7,
            latency: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedAvgSettings {
    pub architecture: Architecture,
    pub rounds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for FedAvgSettings {
    fn default() -> Self {
        FedAvgSettings {
            architecture: Architecture::Mlp { hidden: vec![64, 32] },
            rounds: 500,
            learning_rate: 0.01,
            batch_size: 10,
        }
    }
}

impl FedAvgSettings {
    pub fn learner_spec(&self, seed: u64) -> LearnerSpec {
        LearnerSpec {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            ..LearnerSpec::new(self.architecture.clone(), seed)
        }
    }
}

/// Everything one experiment run needs. Seeds inside nested specs (learner
/// slots, NSGA) are ignored: every stage seed derives from `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub dataset: DatasetSource,
    /// Use this partition instead of drawing one (see `fedpae partition`).
    pub partition_file: Option<PathBuf>,
    pub alpha: f64,
    pub n_clients: usize,
    pub split_fractions: SplitFractions,
    pub min_client_samples: usize,
    pub slots: Vec<LearnerSpec>,
    pub selection: SelectionConfig,
    pub nsga: NsgaConfig,
    pub schedule: ScheduleParams,
    pub storage_mode: StorageMode,
    pub baselines: Vec<Method>,
    pub fedavg: FedAvgSettings,
    /// Backward-plus-update cost as a multiple of the forward pass.
    pub training_multiplier: f64,
    pub output_dir: Option<PathBuf>,
}

/// Gaussian mixture used when no dataset is configured.
pub fn default_synthetic_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_classes: 10,
        n_features: 10,
        n_samples: 40000,
        class_separation: 5.0,
        noise_scale: 1.0,
        seed: 0,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            dataset: DatasetSource::Synthetic(default_synthetic_spec()),
            partition_file: None,
            alpha: 0.1,
            n_clients: 20,
            split_fractions: SplitFractions::default(),
            min_client_samples: 1500,
            slots: Architecture::default_slots()
                .into_iter()
                .map(|a| LearnerSpec::new(a, 0))
                .collect(),
            selection: SelectionConfig::default(),
            nsga: NsgaConfig::default(),
            schedule: ScheduleParams::default(),
            storage_mode: StorageMode::FullModels,
            baselines: vec![Method::LocalSingle, Method::LocalEnsemble, Method::Fedavg],
            fedavg: FedAvgSettings::default(),
            training_multiplier: 3.0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FedPaeError::config("experiment", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FedPaeError::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Applies `FEDPAE_SEED` if it is set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.master_seed = raw
                .trim()
                .parse()
                .map_err(|_| FedPaeError::config("FEDPAE_SEED", format!("`{raw}` is not a u64")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(FedPaeError::config("n_clients", "must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FedPaeError::config("alpha", "must be finite and > 0"));
        }
        if self.min_client_samples < 3 {
            return Err(FedPaeError::config(
                "min_client_samples",
                "must be at least 3 so every split is non-empty",
            ));
        }
        self.split_fractions.validate()?;
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        if self.slots.is_empty() {
            return Err(FedPaeError::config("slots", "need at least one learner slot"));
        }
        for s in &self.slots {
            s.validate()?;
        }
        let k = self.selection.ensemble_size;
        if k == 0 || k > self.slots.len() * self.n_clients {
            return Err(FedPaeError::config(
                "selection.ensemble_size",
                format!("must be in 1..={}", self.slots.len() * self.n_clients),
            ));
        }
        self.nsga.validate()?;
        if self.schedule.latency == 0 {
            return Err(FedPaeError::config("schedule.latency", "must be at least one tick"));
        }
        if self.baselines.contains(&Method::Fedpae) {
            return Err(FedPaeError::config(
                "baselines",
                "fedpae always runs and is not a baseline",
            ));
        }
        if self.baselines.contains(&Method::Fedavg) {
            if self.fedavg.rounds == 0 {
                return Err(FedPaeError::config("fedavg.rounds", "must be at least 1"));
            }
            self.fedavg.learner_spec(0).validate()?;
            if !self.fedavg.architecture.is_dense() {
                return Err(FedPaeError::config(
                    "fedavg.architecture",
                    "parameter averaging needs logistic_regression or mlp",
                ));
            }
        }
        if !(self.training_multiplier >= 1.0 && self.training_multiplier.is_finite()) {
            return Err(FedPaeError::config("training_multiplier", "must be finite and >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert_eq!(c.selection.ensemble_size, 5);
        assert_eq!((c.nsga.population_size, c.nsga.generations), (100, 100));
        assert_eq!(c.slots.len(), 5);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"alpha": 0.5, "n_clients": 4}"#).unwrap();
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.n_clients, 4);
        assert_eq!(c.fedavg.rounds, 500);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let c = ExperimentConfig {
            n_clients: 1,
            ..ExperimentConfig::default()
        };
        assert!(matches!(
            c.validate(),
            Err(FedPaeError::Config { field: "n_clients", .. })
        ));
        let mut c = ExperimentConfig::default();
        c.fedavg.architecture = Architecture::NearestCentroid;
        assert!(matches!(
            c.validate(),
            Err(FedPaeError::Config {
                field: "fedavg.architecture",
                ..
            })
        ));
        assert!(matches!(
            ExperimentConfig::from_json("{\"alpha\": \"x\"}"),
            Err(FedPaeError::Config { .. })
        ));
    }
}
