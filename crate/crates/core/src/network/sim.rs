//! Deterministic logical-clock simulation of the peer-to-peer exchange.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::codec::{
    decode_message, decode_model_id, decode_predictions, encode_message, encode_model_id, Message, MessageType,
};
use crate::data::Dataset;
use crate::error::{FedPaeError, Result};
use crate::learners::{decode_predictor, encode_predictor, Predictor};
use crate::moo::NsgaConfig;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::{round_sig, Scalar};
use crate::selection::{select_ensemble, EnsembleSelection, ModelBench, ModelId, SelectionConfig, StorageMode};

/// Who talks to whom, and how many ticks a message takes on each link.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    peers: Vec<Vec<u32>>,
    active: Vec<bool>,
    default_latency: u64,
    link_latency: BTreeMap<(u32, u32), u64>,
}

impl Topology {
    /// Every client linked to every other with the same latency.
    pub fn complete(n_clients: usize, latency: u64) -> Result<Self> {
        let peers = (0..n_clients as u32)
            .map(|c| (0..n_clients as u32).filter(|&p| p != c).collect())
            .collect();
        Self::from_adjacency(peers, latency)
    }

    pub fn from_adjacency(peers: Vec<Vec<u32>>, latency: u64) -> Result<Self> {
        if latency == 0 {
            return Err(FedPaeError::config("latency", "must be at least one tick"));
        }
        let n = peers.len() as u32;
        for (c, list) in peers.iter().enumerate() {
            if let Some(&p) = list.iter().find(|&&p| p >= n || p == c as u32) {
                return Err(FedPaeError::config(
                    "topology",
                    format!("client {c} links to invalid peer {p}"),
                ));
            }
        }
        Ok(Topology {
            active: vec![true; peers.len()],
            peers,
            default_latency: latency,
            link_latency: BTreeMap::new(),
        })
    }

    pub fn set_link_latency(&mut self, from: u32, to: u32, latency: u64) -> Result<()> {
        if latency == 0 {
            return Err(FedPaeError::config("latency", "must be at least one tick"));
        }
        if !self.peers.get(from as usize).is_some_and(|p| p.contains(&to)) {
            return Err(FedPaeError::config("topology", format!("no link {from} -> {to}")));
        }
        self.link_latency.insert((from, to), latency);
        Ok(())
    }

    pub fn n_clients(&self) -> usize {
        self.peers.len()
    }

    pub fn peers(&self, client: u32) -> &[u32] {
        &self.peers[client as usize]
    }

    pub fn is_active(&self, client: u32) -> bool {
        self.active.get(client as usize).copied().unwrap_or(false)
    }

    pub fn latency(&self, from: u32, to: u32) -> u64 {
        self.link_latency
            .get(&(from, to))
            .copied()
            .unwrap_or(self.default_latency)
    }

    pub fn max_latency(&self) -> u64 {
        self.link_latency.values().copied().fold(self.default_latency, u64::max)
    }

    /// The same network with one client gone; ids of the others are kept.
    pub fn without_client(&self, client: u32) -> Topology {
        let mut t = self.clone();
        if let Some(a) = t.active.get_mut(client as usize) {
            *a = false;
            t.peers[client as usize].clear();
        }
        for list in &mut t.peers {
            list.retain(|&p| p != client);
        }
        t.link_latency.retain(|&(a, b), _| a != client && b != client);
        t
    }
}

/// Externally scheduled events; sends and deliveries are derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScheduleKind {
    TrainDone {
        client: u32,
        slot: u32,
    },
    Select {
        client: u32,
    },
    /// Incoming deliveries are held until tick `until`.
    ClientOffline {
        client: u32,
        until: u64,
    },
}

impl ScheduleKind {
    pub fn client(&self) -> u32 {
        match *self {
            ScheduleKind::TrainDone { client, .. }
            | ScheduleKind::Select { client }
            | ScheduleKind::ClientOffline { client, .. } => client,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub at: u64,
    #[serde(flatten)]
    pub kind: ScheduleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// TRAIN_DONE ticks are drawn uniformly from `0..=stagger`.
    pub stagger: u64,
    /// Ticks between a client's last TRAIN_DONE and its SELECT.
    pub settle_delay: u64,
    pub seed: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            stagger: 5,
            settle_delay: 7,
            seed: 0,
        }
    }
}

/// One TRAIN_DONE per client and slot at a seeded tick, then one SELECT per
/// client `settle_delay` ticks after its own last TRAIN_DONE. Sorted by tick,
/// client-major within a tick.
pub fn build_default_schedule(n_clients: usize, slots: usize, config: &ScheduleConfig) -> Vec<ScheduledEvent> {
    let mut events = Vec::with_capacity(n_clients * (slots + 1));
    for client in 0..n_clients as u32 {
        let mut rng = rng_from_seed(derive_seed(config.seed, "schedule", client as u64, 0));
        let mut last = 0;
        for slot in 0..slots as u32 {
            let at = rng.random_range(0..=config.stagger);
            last = last.max(at);
            events.push(ScheduledEvent {
                at,
                kind: ScheduleKind::TrainDone { client, slot },
            });
        }
        events.push(ScheduledEvent {
            at: last + config.settle_delay,
            kind: ScheduleKind::Select { client },
        });
    }
    events.sort_by_key(|e| e.at);
    events
}

/// What a client brings to the simulation: its validation data and the
/// model it finishes training in each slot.
#[derive(Debug, Clone)]
pub struct SimClient<T> {
    pub val: Dataset<T>,
    pub models: Vec<Predictor<T>>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub storage_mode: StorageMode,
    pub selection: SelectionConfig,
    pub nsga: NsgaConfig,
}

/// One executed event, exported as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: u64,
    pub kind: &'static str,
    pub client: u32,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SimStats {
    pub events: usize,
    pub sends: usize,
    pub delivers: usize,
    /// Deliveries that had to wait for an offline receiver.
    pub queued: usize,
    pub model_requests: usize,
}

#[derive(Debug, Clone)]
pub struct SelectionRecord<T> {
    pub at: u64,
    pub bench_size: usize,
    pub selection: EnsembleSelection<T>,
}

#[derive(Debug)]
pub struct SimOutcome<T> {
    pub benches: Vec<ModelBench<T>>,
    /// Every selection each client made, in time order.
    pub selections: Vec<Vec<SelectionRecord<T>>>,
    pub trace: Vec<TraceRecord>,
    pub stats: SimStats,
}

impl<T> SimOutcome<T> {
    pub fn latest_selection(&self, client: u32) -> Option<&SelectionRecord<T>> {
        self.selections.get(client as usize).and_then(|s| s.last())
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace record serializes") + "\n")
            .collect()
    }
}

#[derive(Debug)]
enum Event {
    Scheduled(ScheduleKind),
    Send { message: Message, model: Option<ModelId> },
    Deliver { frame: Vec<u8>, to: u32 },
    ClientOnline { client: u32 },
}

struct Queue {
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    events: BTreeMap<u64, Event>,
    next_seq: u64,
}

impl Queue {
    fn push(&mut self, at: u64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((at, seq)));
        self.events.insert(seq, event);
    }

    fn pop(&mut self) -> Option<(u64, Event)> {
        let Reverse((at, seq)) = self.heap.pop()?;
        Some((at, self.events.remove(&seq).expect("queued event")))
    }
}

struct ClientState<T> {
    bench: ModelBench<T>,
    offline_until: Option<u64>,
    held: Vec<Vec<u8>>,
    selects: u64,
}

fn validate_schedule<T>(topology: &Topology, clients: &[SimClient<T>], schedule: &[ScheduledEvent]) -> Result<()> {
    if clients.len() != topology.n_clients() {
        return Err(FedPaeError::Schedule(format!(
            "{} clients for a topology of {}",
            clients.len(),
            topology.n_clients()
        )));
    }
    for (i, e) in schedule.iter().enumerate() {
        let c = e.kind.client();
        if !topology.is_active(c) {
            return Err(FedPaeError::Schedule(format!(
                "event {i} references unknown client {c}"
            )));
        }
        match e.kind {
            ScheduleKind::TrainDone { slot, .. } if slot as usize >= clients[c as usize].models.len() => {
                return Err(FedPaeError::Schedule(format!(
                    "event {i}: client {c} has no model in slot {slot}"
                )));
            }
            ScheduleKind::ClientOffline { until, .. } if until <= e.at => {
                return Err(FedPaeError::Schedule(format!(
                    "event {i}: offline window ends at {until}, not after {}",
                    e.at
                )));
            }
            _ => {}
        }
        if i > 0 && schedule[i - 1].at > e.at {
            return Err(FedPaeError::Schedule(format!("event {i} is out of tick order")));
        }
    }
    Ok(())
}

struct Sim<'a, T> {
    topology: &'a Topology,
    clients: &'a [SimClient<T>],
    config: &'a SimConfig,
    queue: Queue,
    state: Vec<ClientState<T>>,
    selections: Vec<Vec<SelectionRecord<T>>>,
    trace: Vec<TraceRecord>,
    stats: SimStats,
}

impl<T: Scalar> Sim<'_, T> {
    fn record(&mut self, t: u64, kind: &'static str, client: u32, detail: serde_json::Value) {
        self.trace.push(TraceRecord {
            t,
            kind,
            client,
            detail,
        });
    }

    fn send(&mut self, at: u64, message: Message, model: Option<ModelId>) {
        self.queue.push(at, Event::Send { message, model });
    }

    fn run(&mut self, at: u64, event: Event) -> Result<()> {
        self.stats.events += 1;
        match event {
            Event::Scheduled(ScheduleKind::TrainDone { client, slot }) => {
                let model = self.clients[client as usize].models[slot as usize].clone();
                let id = ModelId::of(&model);
                let bytes = encode_predictor(&model);
                let state = &mut self.state[client as usize];
                state.bench.add_model(model, &self.clients[client as usize].val)?;
                let bench_size = state.bench.len();
                self.record(
                    at,
                    "TRAIN_DONE",
                    client,
                    json!({"slot": slot, "model": id.to_string(), "bench_size": bench_size}),
                );
                for &peer in self.topology.peers(client) {
                    let m = Message::new(MessageType::Model, client, peer, bytes.clone());
                    self.send(at, m, Some(id));
                }
            }
            Event::Send { message, model } => {
                self.stats.sends += 1;
                let (from, to) = (message.sender, message.receiver);
                let latency = self.topology.latency(from, to);
                self.record(
                    at,
                    "SEND",
                    from,
                    json!({
                        "type": message.kind.name(),
                        "to": to,
                        "model": model.map(|m| m.to_string()),
                        "arrives": at + latency,
                    }),
                );
                let frame = encode_message(&message)?;
                self.queue.push(at + latency, Event::Deliver { frame, to });
            }
            Event::Deliver { frame, to } => {
                let state = &mut self.state[to as usize];
                if state.offline_until.is_some() {
                    state.held.push(frame);
                    self.stats.queued += 1;
                    self.record(at, "QUEUED", to, json!({"held": self.state[to as usize].held.len()}));
                } else {
                    self.deliver(at, &frame, to, false)?;
                }
            }
            Event::Scheduled(ScheduleKind::Select { client }) => self.select(at, client)?,
            Event::Scheduled(ScheduleKind::ClientOffline { client, until }) => {
                let state = &mut self.state[client as usize];
                let until = state.offline_until.map_or(until, |u| u.max(until));
                state.offline_until = Some(until);
                self.record(at, "CLIENT_OFFLINE", client, json!({"until": until}));
                self.queue.push(until, Event::ClientOnline { client });
            }
            Event::ClientOnline { client } => {
                let state = &mut self.state[client as usize];
                // a later, overlapping offline window keeps the client away
                if state.offline_until.is_some_and(|u| u > at) {
                    return Ok(());
                }
                state.offline_until = None;
                let held = std::mem::take(&mut state.held);
                self.record(at, "CLIENT_ONLINE", client, json!({"released": held.len()}));
                for frame in held {
                    self.deliver(at, &frame, client, true)?;
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, at: u64, frame: &[u8], to: u32, from_queue: bool) -> Result<()> {
        self.stats.delivers += 1;
        let message = decode_message(frame)?;
        if message.receiver != to {
            return Err(FedPaeError::Protocol(format!(
                "frame for client {} delivered to {to}",
                message.receiver
            )));
        }
        let from = message.sender;
        let val = &self.clients[to as usize].val;
        let bench = &mut self.state[to as usize].bench;
        let mut detail = json!({"type": message.kind.name(), "from": from, "from_queue": from_queue});
        match message.kind {
            MessageType::Model => {
                let model: Predictor<T> = decode_predictor(&message.payload)?;
                let id = ModelId::of(&model);
                let known = bench.position(&id).is_some();
                if known && bench.predictor(&id).is_none() {
                    bench.attach_predictor(model)?;
                    detail["attached"] = json!(true);
                } else {
                    bench.add_model(model, val)?;
                }
                detail["model"] = json!(id.to_string());
            }
            MessageType::Predictions => {
                let payload = decode_predictions::<T>(&message.payload)?;
                detail["model"] = json!(payload.id.to_string());
                let owner = bench.owner();
                bench.add_predictions(payload.descriptor(owner), payload.column)?;
            }
            MessageType::BenchRequest => {
                let local: Vec<(ModelId, Vec<u8>)> = bench
                    .entries()
                    .iter()
                    .filter(|e| e.descriptor.is_local)
                    .filter_map(|e| {
                        e.predictor
                            .as_ref()
                            .map(|p| (e.descriptor.id, encode_predictor(p.as_ref())))
                    })
                    .collect();
                detail["replies"] = json!(local.len());
                for (id, bytes) in local {
                    self.send(at, Message::new(MessageType::Model, to, from, bytes), Some(id));
                }
            }
            MessageType::ModelRequest => {
                let id = decode_model_id(&message.payload)?;
                detail["model"] = json!(id.to_string());
                let reply = bench
                    .predictor(&id)
                    .filter(|_| id.origin_client == to)
                    .map(|p| encode_predictor(p.as_ref()));
                detail["available"] = json!(reply.is_some());
                if let Some(bytes) = reply {
                    self.send(at, Message::new(MessageType::Model, to, from, bytes), Some(id));
                }
            }
        }
        detail["bench_size"] = json!(self.state[to as usize].bench.len());
        self.record(at, "DELIVER", to, detail);
        Ok(())
    }

    fn select(&mut self, at: u64, client: u32) -> Result<()> {
        let state = &mut self.state[client as usize];
        let bench_size = state.bench.len();
        if state.bench.local_count() == 0 {
            self.record(
                at,
                "SELECT",
                client,
                json!({"bench_size": bench_size, "skipped": "no local model"}),
            );
            return Ok(());
        }
        let round = state.selects;
        state.selects += 1;
        let selection_config = SelectionConfig {
            ensemble_size: self.config.selection.ensemble_size.min(bench_size),
            ..self.config.selection
        };
        let nsga = NsgaConfig {
            seed: derive_seed(self.config.nsga.seed, "select", client as u64, round),
            ..self.config.nsga.clone()
        };
        let selection = select_ensemble(
            &state.bench,
            &self.clients[client as usize].val,
            &selection_config,
            &nsga,
        )?;
        let missing: Vec<ModelId> = selection
            .chosen_model_ids
            .iter()
            .filter(|id| state.bench.predictor(id).is_none())
            .copied()
            .collect();
        self.record(
            at,
            "SELECT",
            client,
            json!({
                "bench_size": bench_size,
                "mask": selection.chosen_mask.to_string(),
                "val_accuracy": round_sig(selection.val_accuracy),
                "local_fraction": round_sig(selection.local_fraction),
                "pf_size": selection.pf_size,
                "requested": missing.len(),
            }),
        );
        for id in missing {
            self.stats.model_requests += 1;
            let m = Message::new(
                MessageType::ModelRequest,
                client,
                id.origin_client,
                encode_model_id(&id),
            );
            self.send(at, m, Some(id));
        }
        self.selections[client as usize].push(SelectionRecord {
            at,
            bench_size,
            selection,
        });
        Ok(())
    }
}

/// Runs `schedule` to completion over `topology`.
///
/// Events execute in (tick, insertion order); derived sends queue behind all
/// scheduled events of the same tick. In predictions-only mode a SELECT that
/// picks peer models it holds only as predictions requests those models from
/// their owners.
pub fn run_simulation<T: Scalar>(
    topology: &Topology,
    clients: &[SimClient<T>],
    schedule: &[ScheduledEvent],
    config: &SimConfig,
) -> Result<SimOutcome<T>> {
    validate_schedule(topology, clients, schedule)?;
    let mut queue = Queue {
        heap: BinaryHeap::new(),
        events: BTreeMap::new(),
        next_seq: 0,
    };
    for e in schedule {
        queue.push(e.at, Event::Scheduled(e.kind));
    }
    let n = topology.n_clients();
    let mut sim = Sim {
        topology,
        clients,
        config,
        queue,
        state: (0..n as u32)
            .map(|c| ClientState {
                bench: ModelBench::new(c, config.storage_mode),
                offline_until: None,
                held: Vec::new(),
                selects: 0,
            })
            .collect(),
        selections: (0..n).map(|_| Vec::new()).collect(),
        trace: Vec::new(),
        stats: SimStats::default(),
    };
    while let Some((at, event)) = sim.queue.pop() {
        sim.run(at, event)?;
    }
    debug_assert!(sim.state.iter().all(|s| s.held.is_empty()));
    Ok(SimOutcome {
        benches: sim.state.into_iter().map(|s| s.bench).collect(),
        selections: sim.selections,
        trace: sim.trace,
        stats: sim.stats,
    })
}

/// Bench size each client saw at its latest SELECT.
pub fn bench_sizes_at_select<T>(outcome: &SimOutcome<T>) -> Vec<Option<usize>> {
    outcome
        .selections
        .iter()
        .map(|s| s.last().map(|r| r.bench_size))
        .collect()
}

#[cfg(test)]
#[path = "sim_tests.rs"]
mod tests;
