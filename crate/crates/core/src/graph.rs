//! Traffic graphs.
//!
//! [`InstantGraph`] is the proximity graph of a single frame: two agents are
//! joined iff their squared distance is below `mu`, and the squared distance
//! is the edge cost. [`CumulativeAdjacency`] carries edge history across
//! frames so that degree centrality can tell first encounters from repeat
//! ones.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ingest::{AgentFrame, AgentId, Vec2};

/// Floor applied to the cost of coincident agents so that every edge cost is
/// strictly positive.
pub const MIN_EDGE_COST: f64 = 1e-12;

pub const DEFAULT_MU: f64 = 100.0;
pub const DEFAULT_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstantGraph {
    vertices: Vec<(AgentId, Vec2)>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
    mu: f64,
}

impl InstantGraph {
    /// Builds a graph directly from positions.
    pub fn from_positions(vertices: Vec<(AgentId, Vec2)>, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Validation(format!("mu must be positive, got {mu}")));
        }
        let mut ids = HashSet::with_capacity(vertices.len());
        for (id, _) in &vertices {
            if !ids.insert(id) {
                return Err(Error::Validation(format!("duplicate agent `{id}` in frame")));
            }
        }
        let n = vertices.len();
        let mut edges = Vec::new();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d2 = (vertices[i].1 - vertices[j].1).norm_squared();
                if d2 < mu {
                    let cost = d2.max(MIN_EDGE_COST);
                    edges.push(Edge { a: i, b: j, cost });
                    adjacency[i].push((j, cost));
                    adjacency[j].push((i, cost));
                }
            }
        }
        Ok(InstantGraph { vertices, edges, adjacency, mu })
    }

    pub fn vertices(&self) -> &[(AgentId, Vec2)] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, id: &AgentId) -> Option<usize> {
        self.vertices.iter().position(|(v, _)| v == id)
    }
}

/// Proximity graph of one frame.
pub fn build_instant_graph(frame: &[AgentFrame], mu: f64) -> Result<InstantGraph> {
    if frame.is_empty() {
        return Err(Error::Validation("cannot build a graph from an empty frame".into()));
    }
    InstantGraph::from_positions(frame.iter().map(|a| (a.agent_id.clone(), a.position)).collect(), mu)
}

/// Fixed-capacity symmetric adjacency that only ever gains entries until it
/// is reset. An entry holds the edge cost at first observation.
#[derive(Debug, Clone)]
pub struct CumulativeAdjacency {
    capacity: usize,
    matrix: Vec<f64>,
    slots: HashMap<AgentId, usize>,
    seen: Vec<HashSet<usize>>,
    resets: usize,
}

impl CumulativeAdjacency {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation("cumulative adjacency capacity must be positive".into()));
        }
        Ok(CumulativeAdjacency {
            capacity,
            matrix: vec![0.0; capacity * capacity],
            slots: HashMap::new(),
            seen: Vec::new(),
            resets: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of times the state has been wiped because capacity ran out.
    pub fn resets(&self) -> usize {
        self.resets
    }

    pub fn observed_agents(&self) -> usize {
        self.slots.len()
    }

    pub fn get(&self, a: &AgentId, b: &AgentId) -> f64 {
        match (self.slots.get(a), self.slots.get(b)) {
            (Some(&i), Some(&j)) => self.matrix[i * self.capacity + j],
            _ => 0.0,
        }
    }

    /// Ids of agents ever connected to `id` in the current epoch.
    pub fn seen(&self, id: &AgentId) -> Vec<AgentId> {
        let Some(&i) = self.slots.get(id) else { return Vec::new() };
        let mut by_slot: Vec<(&usize, &AgentId)> = self.slots.iter().map(|(k, v)| (v, k)).collect();
        by_slot.sort();
        by_slot
            .into_iter()
            .filter(|(s, _)| self.seen[i].contains(s))
            .map(|(_, k)| k.clone())
            .collect()
    }

    /// Number of non-zero entries (counting both triangles).
    pub fn support_size(&self) -> usize {
        self.matrix.iter().filter(|v| **v != 0.0).count()
    }

    fn reset(&mut self) {
        self.matrix.iter_mut().for_each(|v| *v = 0.0);
        self.slots.clear();
        self.seen.clear();
        self.resets += 1;
    }

    fn slot(&mut self, id: &AgentId) -> usize {
        if let Some(&s) = self.slots.get(id) {
            return s;
        }
        let s = self.slots.len();
        self.slots.insert(id.clone(), s);
        self.seen.push(HashSet::new());
        s
    }

    /// Applies one frame.
    ///
    /// Returns, per vertex of `graph`, the number of neighbors that are new to
    /// it (never connected before in this epoch) and strictly slower. When the
    /// frame would push the number of distinct agents past capacity the state
    /// is wiped first and the return flag is `true`.
    pub fn update(
        &mut self,
        graph: &InstantGraph,
        speeds: &HashMap<AgentId, f64>,
    ) -> Result<(BTreeMap<AgentId, usize>, bool)> {
        for (id, _) in graph.vertices() {
            if !speeds.contains_key(id) {
                return Err(Error::ContractViolation(format!("no speed given for agent `{id}`")));
            }
        }
        if graph.len() > self.capacity {
            return Err(Error::Validation(format!(
                "{} agents in one frame exceed adjacency capacity {}",
                graph.len(),
                self.capacity
            )));
        }
        let unseen = graph.vertices().iter().filter(|(id, _)| !self.slots.contains_key(id)).count();
        let mut did_reset = false;
        if self.slots.len() + unseen > self.capacity {
            self.reset();
            did_reset = true;
        }
        let slots: Vec<usize> = graph.vertices().iter().map(|(id, _)| self.slot(id)).collect();

        let mut new_neighbors: BTreeMap<AgentId, usize> =
            graph.vertices().iter().map(|(id, _)| (id.clone(), 0)).collect();
        // Decide newness against the state before this frame so that edge order
        // within the frame cannot matter.
        let mut inserts = Vec::new();
        for e in graph.edges() {
            let (si, sj) = (slots[e.a], slots[e.b]);
            if self.seen[si].contains(&sj) {
                continue;
            }
            let (ida, idb) = (&graph.vertices()[e.a].0, &graph.vertices()[e.b].0);
            let (va, vb) = (speeds[ida], speeds[idb]);
            if va > vb {
                *new_neighbors.get_mut(ida).expect("vertex present") += 1;
            } else if vb > va {
                *new_neighbors.get_mut(idb).expect("vertex present") += 1;
            }
            inserts.push((si, sj, e.cost));
        }
        let n = self.capacity;
        for (si, sj, cost) in inserts {
            if self.matrix[si * n + sj] == 0.0 {
                self.matrix[si * n + sj] = cost;
                self.matrix[sj * n + si] = cost;
            }
            self.seen[si].insert(sj);
            self.seen[sj].insert(si);
        }
        Ok((new_neighbors, did_reset))
    }

    /// Dense text dump of the populated block, one row per line, rows and
    /// columns in slot order with a header of agent ids.
    pub fn dump_dense(&self) -> String {
        let mut ids: Vec<(&usize, &AgentId)> = self.slots.iter().map(|(k, v)| (v, k)).collect();
        ids.sort();
        let mut out = String::new();
        let header: Vec<String> = ids.iter().map(|(_, id)| id.to_string()).collect();
        let _ = writeln!(out, "# {}", header.join(" "));
        for (&i, _) in &ids {
            let row: Vec<String> = ids.iter().map(|(&j, _)| format!("{}", self.matrix[i * self.capacity + j])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

/// Free-function form of [`CumulativeAdjacency::update`].
pub fn update_cumulative(
    state: &mut CumulativeAdjacency,
    graph: &InstantGraph,
    speeds: &HashMap<AgentId, f64>,
) -> Result<BTreeMap<AgentId, usize>> {
    state.update(graph, speeds).map(|(n, _)| n)
}
