//! Peer-adaptive ensemble learning for decentralized federated learning.
//!
//! Clients train heterogeneous local models, exchange them (or their
//! validation-set predictions) peer to peer, and each client picks a
//! personalized ensemble from its model bench with NSGA-II over ensemble
//! strength and diversity, falling back to its local models whenever peers
//! do not help on its own validation data.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the common choices.

pub mod data;
pub mod error;
pub mod harness;
pub mod learners;
pub mod moo;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod selection;

pub use error::{FedPaeError, Result};
pub use scalar::Scalar;

pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Predictor64 = learners::Predictor<f64>;
pub type Predictor32 = learners::Predictor<f32>;
pub type PredictionMatrix64 = selection::PredictionMatrix<f64>;
pub type PredictionMatrix32 = selection::PredictionMatrix<f32>;
pub type ModelBench64 = selection::ModelBench<f64>;
pub type ModelBench32 = selection::ModelBench<f32>;
pub type ExperimentOutcome64 = harness::ExperimentOutcome<f64>;
pub type ExperimentOutcome32 = harness::ExperimentOutcome<f32>;
