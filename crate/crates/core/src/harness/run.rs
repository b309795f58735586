use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::cost::{estimate_breakdown, estimate_fedavg_flops, objective_eval_cost, CostBreakdown, CostModelParams};
use super::metrics::{relative_change, Summary};
use crate::data::{
    class_histogram, label_entropy, partition_dirichlet, read_partition_json, split_shard, ClientShard, Dataset,
    PartitionSpec,
};
use crate::error::{FedPaeError, Result};
use crate::learners::{accuracy, fedavg_train, train, Architecture, FedAvgClient, Origin, Predictor, TrainReport};
use crate::moo::Chromosome;
use crate::network::{
    build_default_schedule, run_simulation, ScheduleConfig, SimClient, SimConfig, SimStats, Topology,
};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::selection::{
    materialize_predictions, overall_accuracy, ModelDescriptor, ModelId, PredictionMatrix, StorageMode, VotingRule,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Test accuracy of each client, by client id.
    pub per_client: Vec<f64>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChangeRow {
    pub client: usize,
    pub method: Method,
    /// Against local_ensemble; absent when its accuracy is zero.
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedPaeDetails {
    pub val_accuracy: Vec<f64>,
    /// Validation accuracy of each client's local-preference mask.
    pub local_preference_val_accuracy: Vec<f64>,
    /// Every client's chosen ensemble scored at least its local-preference mask.
    pub safeguard_holds: bool,
    pub local_fraction: Vec<f64>,
    pub mean_local_fraction: f64,
    pub pf_size: Vec<usize>,
    pub pf_size_summary: Summary,
    pub chosen_masks: Vec<String>,
    pub chosen_model_ids: Vec<Vec<ModelId>>,
    pub chosen_on_front: Vec<bool>,
    /// Bench size each client selected from.
    pub bench_size: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientInfo {
    pub client: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Label entropy of all the client's samples, in nats.
    pub label_entropy: f64,
    pub classes_present: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: CostModelParams,
    pub fedpae: CostBreakdown,
    /// Same table, FedAvg's architecture for `rounds` epochs of D samples.
    pub fedavg_estimate: Option<f64>,
    pub fedavg_architecture: String,
    pub fedavg_rounds: usize,
    /// FLOPs the executed FedAvg run actually spent (one mini-batch per
    /// client per round).
    pub fedavg_executed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub trained: usize,
    /// Lookups served by already-trained models (baselines, exchange).
    pub reused: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub events: usize,
    pub sends: usize,
    pub delivers: usize,
    pub queued: usize,
    pub model_requests: usize,
}

impl From<SimStats> for NetworkStats {
    fn from(s: SimStats) -> Self {
        NetworkStats {
            events: s.events,
            sends: s.sends,
            delivers: s.delivers,
            queued: s.queued,
            model_requests: s.model_requests,
        }
    }
}

pub const REPORT_NOTES: [&str; 3] = [
    "Accuracies are desk-scale synthetic results; compare orderings and trends across methods and alpha, not absolute values.",
    "ci95 is the normal-approximation half-width 1.96*sd/sqrt(n_clients); sd is the sample standard deviation across clients.",
    "relative_change is (method - local_ensemble) / local_ensemble per client; clients with a zero baseline are left empty.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub alpha: f64,
    pub n_clients: usize,
    pub ensemble_size: usize,
    pub storage_mode: StorageMode,
    pub methods: Vec<MethodResult>,
    pub relative_change: Vec<RelativeChangeRow>,
    pub fedpae: FedPaeDetails,
    pub clients: Vec<ClientInfo>,
    pub cost: CostReport,
    pub model_cache: CacheStats,
    pub network: NetworkStats,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Relative changes of `m` against local_ensemble, by client.
    pub fn relative_changes(&self, m: Method) -> Vec<Option<f64>> {
        self.relative_change
            .iter()
            .filter(|r| r.method == m)
            .map(|r| r.relative_change)
            .collect()
    }
}

/// A client's bench at the end of the run, for offline oracle checks.
#[derive(Debug, Clone)]
pub struct BenchSnapshot<T> {
    pub client: usize,
    pub descriptors: Vec<ModelDescriptor>,
    pub matrix: PredictionMatrix<T>,
    pub chosen_mask: Chromosome,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome<T> {
    pub report: ExperimentReport,
    pub runtime_seconds: f64,
    pub trace_jsonl: String,
    /// Pareto front JSONL by client.
    pub pareto_jsonl: Vec<String>,
    pub benches: Vec<BenchSnapshot<T>>,
}

struct ClientData<T> {
    train: Dataset<T>,
    val: Dataset<T>,
    test: Dataset<T>,
}

/// Trained models keyed by training seed, so every method evaluates the
/// very same predictors.
struct ModelCache<T> {
    models: BTreeMap<u64, (Predictor<T>, TrainReport)>,
    stats: CacheStats,
}

impl<T: Scalar> ModelCache<T> {
    fn get_or_train(
        &mut self,
        spec: &crate::learners::LearnerSpec,
        data: &ClientData<T>,
        origin: Origin,
    ) -> Result<&(Predictor<T>, TrainReport)> {
        if self.models.contains_key(&spec.seed) {
            self.stats.reused += 1;
        } else {
            let trained = train(spec, &data.train, &data.val, origin)?;
            self.stats.trained += 1;
            self.models.insert(spec.seed, trained);
        }
        Ok(&self.models[&spec.seed])
    }

    fn get(&mut self, seed: u64) -> Result<&(Predictor<T>, TrainReport)> {
        self.stats.reused += 1;
        self.models
            .get(&seed)
            .ok_or_else(|| FedPaeError::Invariant(format!("model with training seed {seed:#x} missing from cache")))
    }
}

pub fn training_seed(master: u64, client: usize, slot: usize) -> u64 {
    derive_seed(master, "train", client as u64, slot as u64)
}

fn shards_for<T: Scalar>(config: &ExperimentConfig, dataset: &Dataset<T>) -> Result<(Vec<ClientShard>, f64)> {
    let master = config.master_seed;
    if let Some(path) = &config.partition_file {
        let file = read_partition_json(path)?;
        let shards = file.shards();
        for s in &shards {
            if let Some(&bad) = s.all_indices().iter().find(|&&i| i >= dataset.len()) {
                return Err(FedPaeError::input(format!(
                    "partition references sample {bad} beyond the dataset's {}",
                    dataset.len()
                )));
            }
        }
        return Ok((shards, file.alpha));
    }
    let spec = PartitionSpec {
        alpha: config.alpha,
        n_clients: config.n_clients,
        seed: derive_seed(master, "partition", 0, 0),
        split_fractions: config.split_fractions,
        min_client_samples: config.min_client_samples,
    };
    let parts = partition_dirichlet(dataset, &spec)?;
    let shards = parts
        .iter()
        .enumerate()
        .map(|(c, idx)| {
            split_shard(
                c,
                idx,
                dataset,
                config.split_fractions,
                derive_seed(master, "split", c as u64, 0),
            )
            .map_err(|e| e.context(format!("client {c}: splitting")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((shards, config.alpha))
}

/// Soft or hard vote of `members` on `data`.
pub fn ensemble_accuracy<T: Scalar>(members: &[&Predictor<T>], data: &Dataset<T>, voting: VotingRule) -> Result<f64> {
    let columns = members
        .iter()
        .map(|p| p.predict_dataset(data))
        .collect::<Result<Vec<_>>>()?;
    let matrix = PredictionMatrix::from_columns(columns, data.labels().to_vec(), data.n_classes())?;
    let all = Chromosome::from_indices(members.len(), &(0..members.len()).collect::<Vec<_>>())?;
    overall_accuracy(&all, &matrix, voting)
}

/// Partition, train, exchange, select, evaluate, and compare against the
/// configured baselines. Deterministic for a fixed config.
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig) -> Result<ExperimentOutcome<T>> {
    config.validate()?;
    let started = Instant::now();
    let master = config.master_seed;

    let data_seed = match &config.dataset {
        super::config::DatasetSource::Synthetic(spec) => derive_seed(master, "dataset", spec.seed, 0),
        super::config::DatasetSource::File { .. } => 0,
    };
    let dataset: Dataset<T> = config
        .dataset
        .load(data_seed)
        .map_err(|e| e.context("loading dataset"))?;
    let (shards, alpha) = shards_for(config, &dataset)?;
    let n = shards.len();
    if n < 2 {
        return Err(FedPaeError::config("n_clients", "partition has fewer than 2 clients"));
    }
    let clients: Vec<ClientData<T>> = shards
        .iter()
        .map(|s| {
            Ok(ClientData {
                train: dataset.subset(&s.train)?,
                val: dataset.subset(&s.val)?,
                test: dataset.subset(&s.test)?,
            })
        })
        .collect::<Result<_>>()?;
    let client_info = shards
        .iter()
        .map(|s| {
            let hist = class_histogram(&s.all_indices(), &dataset)?;
            Ok(ClientInfo {
                client: s.client_id,
                train: s.train.len(),
                val: s.val.len(),
                test: s.test.len(),
                label_entropy: label_entropy(&hist),
                classes_present: hist.iter().filter(|&&h| h > 0).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    info!(
        "partitioned {} samples across {n} clients (alpha {alpha})",
        dataset.len()
    );

    // local training
    let m = config.slots.len();
    let mut cache = ModelCache {
        models: BTreeMap::new(),
        stats: CacheStats { trained: 0, reused: 0 },
    };
    let mut epochs = Vec::with_capacity(n * m);
    for (c, data) in clients.iter().enumerate() {
        for (s, slot) in config.slots.iter().enumerate() {
            let seed = training_seed(master, c, s);
            let spec = crate::learners::LearnerSpec { seed, ..slot.clone() };
            let origin = Origin {
                client_id: c as u32,
                slot: s as u32,
                training_seed: seed,
            };
            let (_, report) = cache
                .get_or_train(&spec, data, origin)
                .map_err(|e| e.context(format!("client {c}: training slot {s} ({})", slot.architecture.name())))?;
            debug!(
                "client {c} slot {s}: {} epochs, val {:.3}",
                report.epochs_run, report.best_val_accuracy
            );
            epochs.push(report.epochs_run as f64);
        }
    }

    // exchange and selection
    let mut sim_clients = Vec::with_capacity(n);
    for (c, data) in clients.iter().enumerate() {
        let models = (0..m)
            .map(|s| cache.get(training_seed(master, c, s)).map(|(p, _)| p.clone()))
            .collect::<Result<Vec<_>>>()?;
        sim_clients.push(SimClient {
            val: data.val.clone(),
            models,
        });
    }
    let topology = Topology::complete(n, config.schedule.latency)?;
    let schedule = build_default_schedule(
        n,
        m,
        &ScheduleConfig {
            stagger: config.schedule.stagger,
            settle_delay: config.schedule.settle_delay,
            seed: derive_seed(master, "schedule", 0, 0),
        },
    );
    let sim_config = SimConfig {
        storage_mode: config.storage_mode,
        selection: config.selection,
        nsga: crate::moo::NsgaConfig {
            seed: derive_seed(master, "nsga", 0, 0),
            ..config.nsga.clone()
        },
    };
    let outcome =
        run_simulation(&topology, &sim_clients, &schedule, &sim_config).map_err(|e| e.context("peer exchange"))?;
    drop(sim_clients);

    let voting = config.selection.voting;
    let mut fedpae_acc = Vec::with_capacity(n);
    let mut details = FedPaeDetails {
        val_accuracy: Vec::new(),
        local_preference_val_accuracy: Vec::new(),
        safeguard_holds: true,
        local_fraction: Vec::new(),
        mean_local_fraction: 0.0,
        pf_size: Vec::new(),
        pf_size_summary: Summary::of(&[]),
        chosen_masks: Vec::new(),
        chosen_model_ids: Vec::new(),
        chosen_on_front: Vec::new(),
        bench_size: Vec::new(),
    };
    let mut pareto_jsonl = Vec::with_capacity(n);
    let mut benches = Vec::with_capacity(n);
    let mut chosen_forward = Vec::with_capacity(n);
    for (c, data) in clients.iter().enumerate() {
        let record = outcome
            .latest_selection(c as u32)
            .ok_or_else(|| FedPaeError::Invariant(format!("client {c} never selected an ensemble")))?;
        let sel = &record.selection;
        let bench = &outcome.benches[c];
        // the exchange must carry the cached predictors unchanged
        for s in 0..m {
            let (p, _) = cache.get(training_seed(master, c, s))?;
            if bench.position(&ModelId::of(p)).is_none() {
                return Err(FedPaeError::Invariant(format!(
                    "client {c}: bench lacks its own slot {s} model"
                )));
            }
        }
        let members = sel
            .chosen_model_ids
            .iter()
            .map(|id| {
                bench.predictor(id).map(|p| p.as_ref()).ok_or_else(|| {
                    FedPaeError::Invariant(format!("client {c}: chosen model {id} was never downloaded"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        chosen_forward.push(members.iter().map(|p| p.forward_flops() as f64).sum::<f64>());
        fedpae_acc.push(
            ensemble_accuracy(&members, &data.test, voting)
                .map_err(|e| e.context(format!("client {c}: test evaluation")))?,
        );
        details.safeguard_holds &= sel.val_accuracy >= sel.local_preference_accuracy;
        details.val_accuracy.push(sel.val_accuracy);
        details
            .local_preference_val_accuracy
            .push(sel.local_preference_accuracy);
        details.local_fraction.push(sel.local_fraction);
        details.pf_size.push(sel.pf_size);
        details.chosen_masks.push(sel.chosen_mask.to_string());
        details.chosen_model_ids.push(sel.chosen_model_ids.clone());
        details.chosen_on_front.push(sel.chosen_on_front);
        details.bench_size.push(record.bench_size);
        pareto_jsonl.push(sel.pareto_jsonl());
        benches.push(BenchSnapshot {
            client: c,
            descriptors: bench.descriptors().cloned().collect(),
            matrix: materialize_predictions(bench, &data.val)?,
            chosen_mask: sel.chosen_mask.clone(),
            val_accuracy: sel.val_accuracy,
        });
    }
    details.mean_local_fraction = Summary::of(&details.local_fraction).mean;
    details.pf_size_summary = Summary::of(&details.pf_size.iter().map(|&p| p as f64).collect::<Vec<_>>());

    let mut methods = vec![MethodResult {
        method: Method::Fedpae,
        summary: Summary::of(&fedpae_acc),
        per_client: fedpae_acc,
    }];

    // baselines over the same cached predictors
    let mut local_single = Vec::with_capacity(n);
    let mut local_ensemble = Vec::with_capacity(n);
    for (c, data) in clients.iter().enumerate() {
        let mut local = Vec::with_capacity(m);
        for s in 0..m {
            local.push(cache.get(training_seed(master, c, s))?.0.clone());
        }
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (s, p) in local.iter().enumerate() {
            let v = accuracy(p, &data.val)?;
            if v > best_val {
                best = s;
                best_val = v;
            }
        }
        local_single.push(accuracy(&local[best], &data.test)?);
        let refs: Vec<&Predictor<T>> = local.iter().collect();
        local_ensemble.push(ensemble_accuracy(&refs, &data.test, voting)?);
    }
    for (method, values) in [
        (Method::LocalSingle, local_single),
        (Method::LocalEnsemble, local_ensemble.clone()),
    ] {
        if config.baselines.contains(&method) {
            methods.push(MethodResult {
                method,
                summary: Summary::of(&values),
                per_client: values,
            });
        }
    }

    let mut fedavg_executed = None;
    if config.baselines.contains(&Method::Fedavg) {
        let fed_clients: Vec<FedAvgClient<'_, T>> = clients
            .iter()
            .enumerate()
            .map(|(c, d)| FedAvgClient {
                train: &d.train,
                architecture: config.fedavg.architecture.clone(),
                batch_seed: derive_seed(master, "fedavg-batches", c as u64, 0),
            })
            .collect();
        let spec = config.fedavg.learner_spec(derive_seed(master, "fedavg", 0, 0));
        let (global, fed_report) =
            fedavg_train(&fed_clients, &spec, config.fedavg.rounds).map_err(|e| e.context("fedavg baseline"))?;
        fedavg_executed = Some(fed_report.training_flops);
        let values = clients
            .iter()
            .map(|d| accuracy(&global, &d.test))
            .collect::<Result<Vec<_>>>()?;
        methods.push(MethodResult {
            method: Method::Fedavg,
            summary: Summary::of(&values),
            per_client: values,
        });
    }

    let mut relative = Vec::new();
    for r in &methods {
        if r.method == Method::LocalEnsemble {
            continue;
        }
        for (c, (&acc, &base)) in r.per_client.iter().zip(&local_ensemble).enumerate() {
            relative.push(RelativeChangeRow {
                client: c,
                method: r.method,
                relative_change: relative_change(acc, base).ok(),
            });
        }
    }

    // cost model populated from this run
    let (nf, nc) = (dataset.n_features(), dataset.n_classes());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut table = BTreeMap::new();
    let archs = config
        .slots
        .iter()
        .map(|s| s.architecture.clone())
        .chain([config.fedavg.architecture.clone(), Architecture::Constant]);
    for a in archs {
        table.insert(a.name(), a.forward_flops(nf, nc) as f64);
    }
    let val_mean = mean(&client_info.iter().map(|c| c.val as f64).collect::<Vec<_>>());
    let params = CostModelParams {
        n_clients: n as f64,
        slots: config.slots.iter().map(|s| s.architecture.name()).collect(),
        training_iterations: mean(&epochs),
        train_samples: mean(&client_info.iter().map(|c| c.train as f64).collect::<Vec<_>>()),
        population_size: config.nsga.population_size as f64,
        generations: config.nsga.generations as f64,
        c_eval: objective_eval_cost(config.selection.ensemble_size, val_mean, nc),
        pareto_size: details.pf_size_summary.mean,
        val_samples: val_mean,
        chosen_forward_flops: mean(&chosen_forward),
        forward_flops: table,
        training_multiplier: config.training_multiplier,
    };
    let fedavg_name = config.fedavg.architecture.name();
    let cost = CostReport {
        fedpae: estimate_breakdown(&params)?,
        fedavg_estimate: config
            .baselines
            .contains(&Method::Fedavg)
            .then(|| estimate_fedavg_flops(&params, &fedavg_name, config.fedavg.rounds as f64))
            .transpose()?,
        fedavg_architecture: fedavg_name,
        fedavg_rounds: config.fedavg.rounds,
        fedavg_executed,
        params,
    };

    let report = ExperimentReport {
        master_seed: master,
        alpha,
        n_clients: n,
        ensemble_size: config.selection.ensemble_size,
        storage_mode: config.storage_mode,
        methods,
        relative_change: relative,
        fedpae: details,
        clients: client_info,
        cost,
        model_cache: cache.stats,
        network: outcome.stats.into(),
        notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
    };
    let runtime_seconds = started.elapsed().as_secs_f64();
    info!("experiment finished in {runtime_seconds:.1}s");
    Ok(ExperimentOutcome {
        report,
        runtime_seconds,
        trace_jsonl: outcome.trace_jsonl(),
        pareto_jsonl,
        benches,
    })
}
