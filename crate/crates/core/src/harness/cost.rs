//! Analytic FLOPs model:
//!
//! ```text
//! N * ( sum_slots mult * fwd(slot) * T * D      local training
//!     + P * G * c_eval                          ensemble search
//!     + pf * V * chosen_fwd )                   evaluating the Pareto front
//! ```
//!
//! `c_eval = k*V*C + C(k,2) * 5*V*C`: argmax over `k` probability columns for
//! strength, plus roughly five operations per entry for each pairwise
//! correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FedPaeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelParams {
    /// N.
    pub n_clients: f64,
    /// Architecture name of each of the M slots.
    pub slots: Vec<String>,
    /// T: training epochs per model.
    pub training_iterations: f64,
    /// D: training samples per client.
    pub train_samples: f64,
    /// P.
    pub population_size: f64,
    /// G.
    pub generations: f64,
    /// Operations per objective evaluation.
    pub c_eval: f64,
    /// pf: mean Pareto front size.
    pub pareto_size: f64,
    /// V: validation samples per client.
    pub val_samples: f64,
    /// Sum of forward FLOPs over one chosen ensemble.
    pub chosen_forward_flops: f64,
    /// Forward FLOPs per sample, by architecture name.
    pub forward_flops: BTreeMap<String, f64>,
    #[serde(default = "default_multiplier")]
    pub training_multiplier: f64,
}

fn default_multiplier() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub training: f64,
    pub search: f64,
    pub front_evaluation: f64,
    pub total: f64,
}

pub fn objective_eval_cost(k: usize, val_samples: f64, n_classes: usize) -> f64 {
    let (k, c) = (k as f64, n_classes as f64);
    let pairs = k * (k - 1.0) / 2.0;
    k * val_samples * c + pairs * 5.0 * val_samples * c
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_clients", self.n_clients),
            ("training_iterations", self.training_iterations),
            ("train_samples", self.train_samples),
            ("population_size", self.population_size),
            ("generations", self.generations),
            ("c_eval", self.c_eval),
            ("pareto_size", self.pareto_size),
            ("val_samples", self.val_samples),
            ("chosen_forward_flops", self.chosen_forward_flops),
        ];
        for (field, v) in counts {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FedPaeError::config(field, "must be finite and > 0"));
            }
        }
        if self.slots.is_empty() {
            return Err(FedPaeError::config("slots", "need at least one slot"));
        }
        if !(self.training_multiplier >= 1.0 && self.training_multiplier.is_finite()) {
            return Err(FedPaeError::config("training_multiplier", "must be finite and >= 1"));
        }
        Ok(())
    }

    pub fn forward(&self, architecture: &str) -> Result<f64> {
        self.forward_flops
            .get(architecture)
            .copied()
            .ok_or_else(|| FedPaeError::config("forward_flops", format!("no entry for architecture `{architecture}`")))
    }
}

pub fn estimate_breakdown(p: &CostModelParams) -> Result<CostBreakdown> {
    p.validate()?;
    let mut per_epoch = 0.0;
    for slot in &p.slots {
        per_epoch += p.training_multiplier * p.forward(slot)?;
    }
    let n = p.n_clients;
    let training = n * per_epoch * p.training_iterations * p.train_samples;
    let search = n * p.population_size * p.generations * p.c_eval;
    let front_evaluation = n * p.pareto_size * p.val_samples * p.chosen_forward_flops;
    Ok(CostBreakdown {
        training,
        search,
        front_evaluation,
        total: training + search + front_evaluation,
    })
}

pub fn estimate_flops(p: &CostModelParams) -> Result<f64> {
    estimate_breakdown(p).map(|b| b.total)
}

/// FedAvg counterpart from the same table: one architecture, one training
/// term with `rounds` in place of T, and no selection terms.
pub fn estimate_fedavg_flops(p: &CostModelParams, architecture: &str, rounds: f64) -> Result<f64> {
    p.validate()?;
    Ok(p.n_clients * p.training_multiplier * p.forward(architecture)? * rounds * p.train_samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked() -> CostModelParams {
        CostModelParams {
            n_clients: 2.0,
            slots: vec!["unit".into()],
            training_iterations: 10.0,
            train_samples: 100.0,
            population_size: 5.0,
            generations: 4.0,
            c_eval: 1.0,
            pareto_size: 3.0,
            val_samples: 50.0,
            chosen_forward_flops: 1.0,
            forward_flops: BTreeMap::from([("unit".to_string(), 1.0)]),
            training_multiplier: 3.0,
        }
    }

    #[test]
    fn worked_example_is_6340() {
        assert_eq!(estimate_flops(&worked()).unwrap(), 6340.0);
        let b = estimate_breakdown(&worked()).unwrap();
        assert_eq!((b.training, b.search, b.front_evaluation), (6000.0, 40.0, 300.0));
    }

    #[test]
    fn linear_in_clients() {
        let mut p = worked();
        p.n_clients = 4.0;
        assert_eq!(estimate_flops(&p).unwrap(), 2.0 * 6340.0);
    }

    #[test]
    fn missing_architecture_is_a_config_error() {
        let mut p = worked();
        p.slots.push("mystery".into());
        assert!(matches!(
            estimate_flops(&p),
            Err(FedPaeError::Config {
                field: "forward_flops",
                ..
            })
        ));
        assert!(estimate_fedavg_flops(&worked(), "mystery", 500.0).is_err());
        assert_eq!(
            estimate_fedavg_flops(&worked(), "unit", 500.0).unwrap(),
            2.0 * 3.0 * 500.0 * 100.0
        );
    }

    #[test]
    fn eval_cost_counts_pairs() {
        assert_eq!(objective_eval_cost(1, 10.0, 2), 20.0);
        assert_eq!(objective_eval_cost(3, 10.0, 2), 60.0 + 3.0 * 100.0);
    }
}
