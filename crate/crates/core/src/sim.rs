//! Synchronous round engine.
//!
//! Each round `k`: scheduled events fire, every active agent forms its
//! message, copies go out along every directed edge subject to the loss
//! model, and then all deliveries are merged. Nothing received in round `k`
//! influences a message of round `k`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, Family, GraphError, Topology};
use crate::primes::{Codec, Message, Prime, PrimeRegistry, RegistryError};
use crate::protocol::{self, AgentId, AgentState, Variant};

const DATA_STREAM: u64 = 1;
const LOSS_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Path {
        n: usize,
    },
    Cycle {
        n: usize,
    },
    Complete {
        n: usize,
    },
    Star {
        n: usize,
    },
    /// `seed` defaults to the run seed.
    RandomConnected {
        n: usize,
        p: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Edge-list file; relative paths resolve against the config file.
    EdgeList {
        path: PathBuf,
    },
    Edges {
        n: usize,
        edges: Vec<(usize, usize)>,
    },
}

impl TopologySpec {
    pub fn build(&self, run_seed: u64) -> Result<Topology, ConfigError> {
        let t = match self {
            TopologySpec::Path { n } => graph::generate(Family::Path, *n, 0.0, 0)?,
            TopologySpec::Cycle { n } => graph::generate(Family::Cycle, *n, 0.0, 0)?,
            TopologySpec::Complete { n } => graph::generate(Family::Complete, *n, 0.0, 0)?,
            TopologySpec::Star { n } => graph::generate(Family::Star, *n, 0.0, 0)?,
            TopologySpec::RandomConnected { n, p, seed } => {
                graph::generate(Family::RandomConnected, *n, *p, seed.unwrap_or(run_seed))?
            }
            TopologySpec::EdgeList { path } => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Topology::parse_edge_list(&text)?
            }
            TopologySpec::Edges { n, edges } => Topology::new(*n, edges)?,
        };
        Ok(t)
    }

    /// Node count, where it is known without building the graph.
    pub fn node_count(&self) -> Option<usize> {
        match self {
            TopologySpec::Path { n }
            | TopologySpec::Cycle { n }
            | TopologySpec::Complete { n }
            | TopologySpec::Star { n }
            | TopologySpec::RandomConnected { n, .. }
            | TopologySpec::Edges { n, .. } => Some(*n),
            TopologySpec::EdgeList { .. } => None,
        }
    }

    /// Same family at a different size. Fails for explicit graphs.
    pub fn with_node_count(&self, n: usize) -> Option<TopologySpec> {
        let mut spec = self.clone();
        match &mut spec {
            TopologySpec::Path { n: m }
            | TopologySpec::Cycle { n: m }
            | TopologySpec::Complete { n: m }
            | TopologySpec::Star { n: m }
            | TopologySpec::RandomConnected { n: m, .. } => *m = n,
            TopologySpec::EdgeList { .. } | TopologySpec::Edges { .. } => return None,
        }
        Some(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataAssignment {
    /// `values[i]` belongs to agent `i + 1`.
    Explicit { values: Vec<u32> },
    /// Uniform in `[1, M]`; `seed` defaults to the run seed.
    Uniform {
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl Default for DataAssignment {
    fn default() -> Self {
        DataAssignment::Uniform { seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDrop {
    pub round: usize,
    pub from: AgentId,
    pub to: AgentId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossModel {
    #[default]
    None,
    /// Each directed copy is dropped independently with probability `q`.
    Bernoulli { q: f64 },
    /// Exactly the listed copies are dropped.
    Scripted { drops: Vec<ScriptedDrop> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventAction {
    /// `attach[0]` is the neighbor whose table is queried for a free prime.
    Join {
        node: AgentId,
        attach: Vec<AgentId>,
        value: u32,
    },
    Leave {
        node: AgentId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub round: usize,
    #[serde(flatten)]
    pub action: EventAction,
}

fn default_tail_rounds() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Data range upper bound M.
    pub max_value: u32,
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `4 · diameter + 16`.
    #[serde(default)]
    pub max_rounds: Option<usize>,
    /// Rounds still recorded once every table is settled.
    #[serde(default = "default_tail_rounds")]
    pub tail_rounds: usize,
    pub topology: TopologySpec,
    #[serde(default)]
    pub data: DataAssignment,
    #[serde(default)]
    pub loss: LossModel,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl SimConfig {
    pub fn new(topology: TopologySpec, max_value: u32, variant: Variant) -> Self {
        SimConfig {
            max_value,
            variant,
            seed: 0,
            max_rounds: None,
            tail_rounds: default_tail_rounds(),
            topology,
            data: DataAssignment::default(),
            loss: LossModel::None,
            events: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a TOML config, resolving a relative edge-list path against the
    /// config file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = SimConfig::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let TopologySpec::EdgeList { path } = &mut self.topology {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_value < 1 {
            return Err(invalid("max_value", "must be at least 1"));
        }
        if self.max_rounds == Some(0) {
            return Err(invalid("max_rounds", "must be at least 1"));
        }
        match &self.loss {
            LossModel::Bernoulli { q } if !(0.0..1.0).contains(q) => {
                return Err(invalid("loss.q", format!("{q} outside [0, 1)")));
            }
            _ => {}
        }
        if let DataAssignment::Explicit { values } = &self.data {
            if let Some(n) = self.topology.node_count() {
                if values.len() != n {
                    return Err(invalid(
                        "data.values",
                        format!("{} values for {n} agents", values.len()),
                    ));
                }
            }
            if let Some(v) = values.iter().find(|&&v| v < 1 || v > self.max_value) {
                return Err(invalid(
                    "data.values",
                    format!("{v} outside [1, {}]", self.max_value),
                ));
            }
        }
        let mut rounds = BTreeSet::new();
        for ev in &self.events {
            if !rounds.insert(ev.round) {
                return Err(invalid(
                    "events",
                    format!("more than one event in round {}", ev.round),
                ));
            }
            if let EventAction::Join { attach, value, .. } = &ev.action {
                if attach.is_empty() {
                    return Err(invalid("events.attach", "join needs at least one neighbor"));
                }
                if *value < 1 || *value > self.max_value {
                    return Err(invalid(
                        "events.value",
                        format!("{value} outside [1, {}]", self.max_value),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Keeps each directed delivery with probability `1 − q`.
pub fn apply_loss<R: Rng>(
    edges: &[(AgentId, AgentId)],
    q: f64,
    rng: &mut R,
) -> Vec<(AgentId, AgentId)> {
    edges.iter().copied().filter(|_| !rng.gen_bool(q)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRecord {
    pub agent: AgentId,
    pub prime: Prime,
    pub value: u32,
    pub message: Message,
    pub message_bits: u64,
    /// Distinct primes in the message, goodbyes included.
    pub pairs_sent: usize,
    /// Table at the start of the round, the one the message was formed from.
    pub table: Vec<(Prime, u32)>,
    /// Still in the network after this round.
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub from: AgentId,
    pub to: AgentId,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyRecord {
    pub round: usize,
    pub agent: Option<AgentId>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundTrace {
    pub round: usize,
    /// One record per agent that transmitted this round, by agent id.
    pub agents: Vec<AgentRecord>,
    pub deliveries: Vec<Delivery>,
    pub anomalies: Vec<AnomalyRecord>,
}

impl RoundTrace {
    pub fn record(&self, agent: AgentId) -> Option<&AgentRecord> {
        self.agents.iter().find(|r| r.agent == agent)
    }

    /// Messages `agent` actually received this round, by sender.
    pub fn incoming(&self, agent: AgentId) -> Vec<(AgentId, &Message)> {
        self.deliveries
            .iter()
            .filter(|d| d.to == agent && d.delivered)
            .filter_map(|d| self.record(d.from).map(|r| (d.from, &r.message)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub completion_round: Option<usize>,
    pub diameter: usize,
    pub peak_message_bits: u64,
    pub total_bits_transmitted: u64,
    pub rounds: usize,
    pub variant: Variant,
    pub anomalies: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub traces: Vec<RoundTrace>,
    pub summary: Summary,
    /// Initial topology, before any churn.
    pub topology: Topology,
    /// Initial `(prime, value)` of agents `1..=n`.
    pub initial: BTreeMap<AgentId, (Prime, u32)>,
    pub registry: PrimeRegistry,
}

impl RunOutput {
    pub fn anomalies(&self) -> impl Iterator<Item = &AnomalyRecord> {
        self.traces.iter().flat_map(|t| t.anomalies.iter())
    }
}

/// Smallest round at which every active agent's table holds every active
/// agent's pair.
pub fn completion_round(traces: &[RoundTrace]) -> Option<usize> {
    traces.iter().find(|t| is_complete(t)).map(|t| t.round)
}

/// Whether every active table holds every active pair at this round.
pub fn is_complete(trace: &RoundTrace) -> bool {
    let active: Vec<&AgentRecord> = trace.agents.iter().filter(|r| r.active).collect();
    active.iter().all(|holder| {
        active.iter().all(|owner| {
            holder
                .table
                .binary_search(&(owner.prime, owner.value))
                .is_ok()
        })
    })
}

fn is_settled(trace: &RoundTrace) -> bool {
    let active: BTreeSet<(Prime, u32)> = trace
        .agents
        .iter()
        .filter(|r| r.active)
        .map(|r| (r.prime, r.value))
        .collect();
    trace
        .agents
        .iter()
        .filter(|r| r.active)
        .all(|r| r.table.iter().copied().collect::<BTreeSet<_>>() == active)
}

struct Network {
    agents: BTreeMap<AgentId, AgentState>,
    adjacency: BTreeMap<AgentId, BTreeSet<AgentId>>,
}

impl Network {
    fn is_connected(&self) -> bool {
        let Some(&start) = self.adjacency.keys().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[&u] {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen.len() == self.adjacency.len()
    }

    fn remove(&mut self, node: AgentId) {
        if let Some(nbrs) = self.adjacency.remove(&node) {
            for v in nbrs {
                if let Some(set) = self.adjacency.get_mut(&v) {
                    set.remove(&node);
                }
            }
        }
    }
}

fn assign_values(cfg: &SimConfig, n: usize) -> Result<Vec<u32>, ConfigError> {
    match &cfg.data {
        DataAssignment::Explicit { values } => {
            if values.len() != n {
                return Err(invalid(
                    "data.values",
                    format!("{} values for {n} agents", values.len()),
                ));
            }
            Ok(values.clone())
        }
        DataAssignment::Uniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(cfg.seed));
            rng.set_stream(DATA_STREAM);
            Ok((0..n).map(|_| rng.gen_range(1..=cfg.max_value)).collect())
        }
    }
}

/// Runs one configured experiment to completion.
pub fn run(cfg: &SimConfig) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    let topology = cfg.topology.build(cfg.seed)?;
    let n = topology.node_count();
    let values = assign_values(cfg, n)?;
    let codec = Codec::new(cfg.max_value);
    let mut registry = PrimeRegistry::centralized(n)?;

    let mut net = Network {
        agents: BTreeMap::new(),
        adjacency: BTreeMap::new(),
    };
    let mut initial = BTreeMap::new();
    for id in topology.nodes() {
        let prime = registry.prime_of(id).expect("centralized assignment");
        let state = AgentState::new(id, prime, values[id - 1], cfg.variant, codec)
            .map_err(|e| invalid("data.values", e.to_string()))?;
        initial.insert(id, (prime, values[id - 1]));
        net.agents.insert(id, state);
        let nbrs = topology.neighbors(id)?.iter().copied().collect();
        net.adjacency.insert(id, nbrs);
    }

    let diameter = graph::diameter(&topology);
    let max_rounds = cfg.max_rounds.unwrap_or(4 * diameter + 16);
    let events: BTreeMap<usize, EventAction> = cfg
        .events
        .iter()
        .map(|e| (e.round, e.action.clone()))
        .collect();
    let last_event = events.keys().next_back().copied();
    let scripted: BTreeSet<ScriptedDrop> = match &cfg.loss {
        LossModel::Scripted { drops } => drops.iter().copied().collect(),
        _ => BTreeSet::new(),
    };
    let mut loss_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    loss_rng.set_stream(LOSS_STREAM);

    let mut traces = Vec::new();
    let mut settled_at: Option<usize> = None;

    for k in 0..max_rounds {
        let mut anomalies = Vec::new();
        let mut leaving = None;

        match events.get(&k) {
            Some(EventAction::Join {
                node,
                attach,
                value,
            }) => {
                if net.agents.contains_key(node) || registry.prime_of(*node).is_some() {
                    return Err(invalid(
                        "events.node",
                        format!("agent {node} already exists"),
                    ));
                }
                if let Some(bad) = attach.iter().find(|a| !net.adjacency.contains_key(a)) {
                    return Err(invalid(
                        "events.attach",
                        format!("round {k}: agent {bad} is not in the network"),
                    ));
                }
                let queried = net.agents[&attach[0]].table().clone();
                match protocol::join(*node, &queried, &mut registry, *value, cfg.variant, codec) {
                    Ok(state) => {
                        log::info!(
                            "round {k}: agent {node} joins with prime {}",
                            state.own_prime()
                        );
                        net.agents.insert(*node, state);
                        net.adjacency
                            .insert(*node, attach.iter().copied().collect());
                        for a in attach {
                            net.adjacency.get_mut(a).unwrap().insert(*node);
                        }
                    }
                    Err(e) => anomalies.push(AnomalyRecord {
                        round: k,
                        agent: Some(*node),
                        detail: format!("join failed: {e}"),
                    }),
                }
            }
            Some(EventAction::Leave { node }) => {
                if net.agents.get(node).is_some_and(AgentState::is_active) {
                    leaving = Some(*node);
                } else {
                    return Err(invalid(
                        "events.node",
                        format!("round {k}: agent {node} cannot leave, not active"),
                    ));
                }
            }
            None => {}
        }

        // transmit
        let mut records = Vec::with_capacity(net.agents.len());
        let mut outgoing: BTreeMap<AgentId, Message> = BTreeMap::new();
        for (&id, state) in net.agents.iter_mut() {
            let table: Vec<(Prime, u32)> = state.table().iter().collect();
            let sent = if leaving == Some(id) {
                state.leave()
            } else {
                state.form_message()
            };
            let message = match sent {
                Ok(m) => m,
                Err(e) => {
                    anomalies.push(AnomalyRecord {
                        round: k,
                        agent: Some(id),
                        detail: format!("cannot form message: {e}"),
                    });
                    continue;
                }
            };
            let pairs_sent = codec
                .factor_bounded(&message, codec.sentinel() + codec.max_value())
                .map(|p| p.len())
                .unwrap_or(0);
            records.push(AgentRecord {
                agent: id,
                prime: state.own_prime(),
                value: state.own_value(),
                message_bits: message.bit_length(),
                message: message.clone(),
                pairs_sent,
                table,
                active: state.is_active(),
            });
            outgoing.insert(id, message);
        }

        // deliver
        let links: Vec<(AgentId, AgentId)> = outgoing
            .keys()
            .flat_map(|&u| net.adjacency[&u].iter().map(move |&v| (u, v)))
            .collect();
        let delivered: BTreeSet<(AgentId, AgentId)> = match &cfg.loss {
            LossModel::None => links.iter().copied().collect(),
            LossModel::Bernoulli { q } => {
                apply_loss(&links, *q, &mut loss_rng).into_iter().collect()
            }
            LossModel::Scripted { .. } => links
                .iter()
                .copied()
                .filter(|&(from, to)| !scripted.contains(&ScriptedDrop { round: k, from, to }))
                .collect(),
        };
        let deliveries: Vec<Delivery> = links
            .iter()
            .map(|&(from, to)| Delivery {
                from,
                to,
                delivered: delivered.contains(&(from, to)),
            })
            .collect();

        // receive
        for &(from, to) in &delivered {
            let state = net.agents.get_mut(&to).expect("linked agent exists");
            if !state.is_active() {
                continue;
            }
            match state.receive_message(&outgoing[&from]) {
                Ok(outcome) => {
                    for a in outcome.anomalies {
                        anomalies.push(AnomalyRecord {
                            round: k,
                            agent: Some(to),
                            detail: format!("{a} (from agent {from})"),
                        });
                    }
                }
                Err(e) => anomalies.push(AnomalyRecord {
                    round: k,
                    agent: Some(to),
                    detail: format!("message from agent {from} rejected: {e}"),
                }),
            }
        }

        if let Some(node) = leaving {
            net.remove(node);
            net.agents.remove(&node);
            registry.retire(node)?;
            if !net.is_connected() {
                anomalies.push(AnomalyRecord {
                    round: k,
                    agent: Some(node),
                    detail: "network disconnected after leave".into(),
                });
            }
        }

        for a in &anomalies {
            match a.agent {
                Some(id) => log::warn!("round {}: agent {id}: {}", a.round, a.detail),
                None => log::warn!("round {}: {}", a.round, a.detail),
            }
        }
        let trace = RoundTrace {
            round: k,
            agents: records,
            deliveries,
            anomalies,
        };
        let events_done = last_event.is_none_or(|r| r < k);
        if events_done && is_settled(&trace) {
            settled_at.get_or_insert(k);
        } else {
            settled_at = None;
        }
        traces.push(trace);
        if settled_at.is_some_and(|s| k >= s + cfg.tail_rounds) {
            break;
        }
    }

    let summary = Summary {
        completion_round: completion_round(&traces),
        diameter,
        peak_message_bits: traces
            .iter()
            .flat_map(|t| t.agents.iter().map(|r| r.message_bits))
            .max()
            .unwrap_or(0),
        total_bits_transmitted: traces
            .iter()
            .flat_map(|t| t.agents.iter().map(|r| r.message_bits))
            .sum(),
        rounds: traces.len(),
        variant: cfg.variant,
        anomalies: traces.iter().map(|t| t.anomalies.len()).sum(),
    };
    Ok(RunOutput {
        traces,
        summary,
        topology,
        initial,
        registry,
    })
}

pub const TRACE_HEADER: [&str; 7] = [
    "round",
    "agent",
    "prime",
    "message_decimal",
    "message_bits",
    "table_size",
    "active",
];

/// One row per (round, agent).
pub fn write_trace_csv<W: Write>(traces: &[RoundTrace], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for t in traces {
        for r in &t.agents {
            w.write_record([
                t.round.to_string(),
                r.agent.to_string(),
                r.prime.to_string(),
                r.message.to_string(),
                r.message_bits.to_string(),
                r.table.len().to_string(),
                r.active.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `key = value` lines in fixed order.
pub fn write_summary<W: Write>(s: &Summary, mut out: W) -> io::Result<()> {
    let completion = s
        .completion_round
        .map_or_else(|| "never".to_string(), |k| k.to_string());
    writeln!(out, "completion_round = {completion}")?;
    writeln!(out, "diameter = {}", s.diameter)?;
    writeln!(out, "peak_message_bits = {}", s.peak_message_bits)?;
    writeln!(out, "total_bits_transmitted = {}", s.total_bits_transmitted)?;
    writeln!(out, "rounds = {}", s.rounds)?;
    writeln!(out, "variant = {}", s.variant)?;
    writeln!(out, "anomalies = {}", s.anomalies)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(topology: TopologySpec, variant: Variant) -> SimConfig {
        SimConfig::new(topology, 4, variant)
    }

    #[test]
    fn path_of_three_completes_at_diameter() {
        for variant in [Variant::PrimeTime, Variant::Incremental] {
            let out = run(&cfg(TopologySpec::Path { n: 3 }, variant)).unwrap();
            assert_eq!(out.summary.diameter, 2);
            assert_eq!(out.summary.completion_round, Some(2));
            assert_eq!(out.traces.len(), 5, "rounds 0..=d+2 are recorded");
        }
    }

    #[test]
    fn single_agent() {
        let out = run(&cfg(TopologySpec::Path { n: 1 }, Variant::Incremental)).unwrap();
        assert_eq!(out.summary.completion_round, Some(0));
        let first = &out.traces[0].agents[0];
        let (prime, value) = out.initial[&1];
        assert_eq!(first.message, Message::one().times_power(prime, value));
        for t in &out.traces[1..] {
            assert!(t.agents[0].message.is_one());
        }
    }

    fn single_drop(variant: Variant) -> RunOutput {
        let mut c = cfg(TopologySpec::Path { n: 3 }, variant);
        c.loss = LossModel::Scripted {
            drops: vec![ScriptedDrop {
                round: 1,
                from: 2,
                to: 3,
            }],
        };
        c.max_rounds = Some(30);
        run(&c).unwrap()
    }

    #[test]
    fn single_drop_starves_incremental() {
        let out = single_drop(Variant::Incremental);
        assert_eq!(out.summary.completion_round, None);
        assert_eq!(out.traces.len(), 30);
        let p1 = out.initial[&1].0;
        for t in &out.traces {
            assert!(t.record(3).unwrap().table.iter().all(|&(p, _)| p != p1));
        }
        let out = single_drop(Variant::PrimeTime);
        assert_eq!(out.summary.completion_round, Some(3));
    }

    #[test]
    fn completion_round_examples() {
        let out = run(&cfg(TopologySpec::Complete { n: 5 }, Variant::PrimeTime)).unwrap();
        assert_eq!(out.summary.completion_round, Some(1));
        let out = run(&cfg(TopologySpec::Star { n: 6 }, Variant::Incremental)).unwrap();
        assert_eq!(out.summary.completion_round, Some(2));
        assert_eq!(completion_round(&out.traces[..2]), None);
    }

    #[test]
    fn apply_loss_examples() {
        let edges: Vec<(usize, usize)> = (0..100).map(|i| (i, i + 1)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(apply_loss(&edges, 0.0, &mut rng), edges);

        let q = 1.0 - 1e-9;
        let a = apply_loss(&edges, q, &mut ChaCha8Rng::seed_from_u64(9));
        let b = apply_loss(&edges, q, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);

        let many: Vec<(usize, usize)> = (0..10_000).map(|i| (i, i)).collect();
        let kept = apply_loss(&many, 0.3, &mut ChaCha8Rng::seed_from_u64(11)).len();
        let drop_rate = 1.0 - kept as f64 / 10_000.0;
        assert!((drop_rate - 0.3).abs() <= 0.02, "drop rate {drop_rate}");
    }

    #[test]
    fn validation_names_fields() {
        let mut c = cfg(TopologySpec::Path { n: 3 }, Variant::PrimeTime);
        c.loss = LossModel::Bernoulli { q: 1.0 };
        match run(&c) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "loss.q"),
            other => panic!("unexpected {other:?}"),
        }
        let mut c = cfg(TopologySpec::Path { n: 3 }, Variant::PrimeTime);
        c.events = vec![
            Event {
                round: 3,
                action: EventAction::Leave { node: 1 },
            },
            Event {
                round: 3,
                action: EventAction::Leave { node: 2 },
            },
        ];
        assert!(matches!(run(&c), Err(ConfigError::Invalid { field, .. }) if field == "events"));
        let mut c = cfg(TopologySpec::Path { n: 3 }, Variant::PrimeTime);
        c.data = DataAssignment::Explicit { values: vec![1, 2] };
        assert!(
            matches!(c.validate(), Err(ConfigError::Invalid { field, .. }) if field == "data.values")
        );
        c.data = DataAssignment::Explicit {
            values: vec![1, 2, 5],
        };
        assert!(c.validate().is_err());
        let mut c = cfg(TopologySpec::Path { n: 3 }, Variant::PrimeTime);
        c.max_value = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_of_config() {
        let text = r#"
            max_value = 4
            variant = "incremental"
            seed = 11

            [topology]
            family = "random_connected"
            n = 12
            p = 0.3

            [data]
            mode = "uniform"

            [loss]
            model = "bernoulli"
            q = 0.1

            [[events]]
            round = 20
            kind = "join"
            node = 13
            attach = [1, 2]
            value = 3

            [[events]]
            round = 30
            kind = "leave"
            node = 5
        "#;
        let c = SimConfig::from_toml(text).unwrap();
        assert_eq!(c.variant, Variant::Incremental);
        assert_eq!(c.events.len(), 2);
        assert_eq!(c.events[1].action, EventAction::Leave { node: 5 });
        let back = SimConfig::from_toml(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(SimConfig::from_toml("max_value = 4\nvariant = \"primetime\"\nbogus = 1\n[topology]\nfamily = \"path\"\nn = 3\n").is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let mut c = cfg(
            TopologySpec::RandomConnected {
                n: 15,
                p: 0.2,
                seed: None,
            },
            Variant::PrimeTime,
        );
        c.loss = LossModel::Bernoulli { q: 0.25 };
        c.seed = 42;
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn trace_and_summary_formats() {
        let mut c = cfg(TopologySpec::Path { n: 2 }, Variant::PrimeTime);
        c.data = DataAssignment::Explicit { values: vec![1, 2] };
        let out = run(&c).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&out.traces, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,agent,prime,message_decimal,message_bits,table_size,active"
        );
        assert_eq!(lines.next().unwrap(), "0,1,2,2,2,1,true");
        assert_eq!(lines.next().unwrap(), "0,2,3,9,4,1,true");
        assert_eq!(lines.next().unwrap(), "1,1,2,18,5,2,true");

        let mut buf = Vec::new();
        write_summary(&out.summary, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "completion_round = 1\ndiameter = 1\npeak_message_bits = 5\ntotal_bits_transmitted = "
        ));
    }
}
