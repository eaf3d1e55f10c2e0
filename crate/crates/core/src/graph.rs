//! Static undirected topologies and the hop-distance machinery behind the
//! completion bound and the per-round message characterizations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nodes are labelled `1..=node_count`.
pub type NodeId = usize;

/// Redraw budget for `random_connected`.
pub const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("disconnected graph")]
    Disconnected,
    #[error("graph must have at least one node")]
    Empty,
    #[error("cannot generate connected graph after {0} redraws")]
    CannotConnect(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("edge list line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Connected, simple, undirected graph on nodes `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn new(node_count: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut sets = vec![BTreeSet::new(); node_count];
        for &(u, v) in edges {
            for x in [u, v] {
                if x == 0 || x > node_count {
                    return Err(GraphError::UnknownNode(x));
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !sets[u - 1].insert(v) {
                return Err(GraphError::DuplicateEdge(u.min(v), u.max(v)));
            }
            sets[v - 1].insert(u);
        }
        let topo = Topology {
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        };
        if topo.distances_from(1).iter().any(Option::is_none) {
            return Err(GraphError::Disconnected);
        }
        Ok(topo)
    }

    /// Parses the `u v` per line edge-list format. Blank lines and `#`
    /// comments are skipped; the node count is the largest label seen.
    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        let mut max_label = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| GraphError::Parse {
                line: idx + 1,
                reason,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(parse_err(format!(
                    "expected 2 fields, found {}",
                    fields.len()
                )));
            }
            let mut ends = [0usize; 2];
            for (slot, f) in ends.iter_mut().zip(&fields) {
                *slot = f
                    .parse()
                    .map_err(|_| parse_err(format!("invalid node label {f:?}")))?;
                if *slot == 0 {
                    return Err(parse_err("node labels are 1-indexed".into()));
                }
            }
            max_label = max_label.max(ends[0]).max(ends[1]);
            edges.push((ends[0], ends[1]));
        }
        Topology::new(max_label.max(1), &edges)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        1..=self.node_count()
    }

    pub fn neighbors(&self, node: NodeId) -> Result<&[NodeId], GraphError> {
        self.check(node)?;
        Ok(&self.adjacency[node - 1])
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.nodes()
            .flat_map(|u| {
                self.adjacency[u - 1]
                    .iter()
                    .filter(move |&&v| v > u)
                    .map(move |&v| (u, v))
            })
            .collect()
    }

    fn check(&self, node: NodeId) -> Result<(), GraphError> {
        if node == 0 || node > self.node_count() {
            Err(GraphError::UnknownNode(node))
        } else {
            Ok(())
        }
    }

    fn distances_from(&self, source: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count()];
        dist[source - 1] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u - 1].unwrap();
            for &v in &self.adjacency[u - 1] {
                if dist[v - 1].is_none() {
                    dist[v - 1] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn eccentricity(&self, node: NodeId) -> Result<usize, GraphError> {
        Ok(bfs_distances(self, node)?.into_values().max().unwrap_or(0))
    }
}

/// Exact hop distances from `source` to every node.
pub fn bfs_distances(t: &Topology, source: NodeId) -> Result<BTreeMap<NodeId, usize>, GraphError> {
    t.check(source)?;
    Ok(t.distances_from(source)
        .into_iter()
        .enumerate()
        .map(|(i, d)| (i + 1, d.expect("topology is connected")))
        .collect())
}

/// Maximum pairwise hop distance. A single node has diameter 0.
pub fn diameter(t: &Topology) -> usize {
    t.nodes()
        .map(|i| t.eccentricity(i).expect("node in range"))
        .max()
        .unwrap_or(0)
}

/// `({j : d(i,j) ≤ k}, {j : d(i,j) = k})`.
pub fn hop_sets(
    t: &Topology,
    i: NodeId,
    k: usize,
) -> Result<(BTreeSet<NodeId>, BTreeSet<NodeId>), GraphError> {
    let dist = bfs_distances(t, i)?;
    let inclusive = dist
        .iter()
        .filter(|(_, &d)| d <= k)
        .map(|(&j, _)| j)
        .collect();
    let exclusive = dist
        .iter()
        .filter(|(_, &d)| d == k)
        .map(|(&j, _)| j)
        .collect();
    Ok((inclusive, exclusive))
}

/// All-pairs hop distances, for answering many hop-set queries on one graph.
#[derive(Debug, Clone)]
pub struct HopSets {
    dist: Vec<Vec<usize>>,
}

impl HopSets {
    pub fn new(t: &Topology) -> Self {
        let dist = t
            .nodes()
            .map(|i| {
                t.distances_from(i)
                    .into_iter()
                    .map(|d| d.expect("topology is connected"))
                    .collect()
            })
            .collect();
        HopSets { dist }
    }

    pub fn distance(&self, i: NodeId, j: NodeId) -> usize {
        self.dist[i - 1][j - 1]
    }

    pub fn inclusive(&self, i: NodeId, k: usize) -> BTreeSet<NodeId> {
        self.select(i, |d| d <= k)
    }

    pub fn exclusive(&self, i: NodeId, k: usize) -> BTreeSet<NodeId> {
        self.select(i, |d| d == k)
    }

    pub fn eccentricity(&self, i: NodeId) -> usize {
        self.dist[i - 1].iter().copied().max().unwrap_or(0)
    }

    fn select(&self, i: NodeId, keep: impl Fn(usize) -> bool) -> BTreeSet<NodeId> {
        self.dist[i - 1]
            .iter()
            .enumerate()
            .filter(|(_, &d)| keep(d))
            .map(|(j, _)| j + 1)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Path,
    Cycle,
    Complete,
    /// Node 1 is the hub.
    Star,
    RandomConnected,
}

impl FromStr for Family {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "path" => Ok(Family::Path),
            "cycle" => Ok(Family::Cycle),
            "complete" => Ok(Family::Complete),
            "star" => Ok(Family::Star),
            "random_connected" => Ok(Family::RandomConnected),
            other => Err(GraphError::InvalidParameter(format!(
                "unknown family {other:?}"
            ))),
        }
    }
}

/// Builds a member of `family`. `p` and `seed` only matter for
/// `RandomConnected`, which draws G(n, p) and redraws until connected.
pub fn generate(family: Family, n: usize, p: f64, seed: u64) -> Result<Topology, GraphError> {
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let edges: Vec<(NodeId, NodeId)> = match family {
        Family::Path => (1..n).map(|i| (i, i + 1)).collect(),
        Family::Cycle => {
            if n < 3 {
                return Err(GraphError::InvalidParameter("cycle needs n >= 3".into()));
            }
            (1..n).map(|i| (i, i + 1)).chain([(1, n)]).collect()
        }
        Family::Complete => (1..=n)
            .flat_map(|u| (u + 1..=n).map(move |v| (u, v)))
            .collect(),
        Family::Star => (2..=n).map(|v| (1, v)).collect(),
        Family::RandomConnected => return random_connected(n, p, seed),
    };
    Topology::new(n, &edges)
}

fn random_connected(n: usize, p: f64, seed: u64) -> Result<Topology, GraphError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(GraphError::InvalidParameter(format!(
            "edge probability {p} outside (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REDRAWS {
        let mut edges = Vec::new();
        for u in 1..=n {
            for v in u + 1..=n {
                if rng.gen_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        match Topology::new(n, &edges) {
            Ok(t) => return Ok(t),
            Err(GraphError::Disconnected) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(GraphError::CannotConnect(MAX_REDRAWS))
}
