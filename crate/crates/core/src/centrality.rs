//! Closeness and degree centrality time series.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_instant_graph, CumulativeAdjacency, InstantGraph};
use crate::ingest::{AgentId, TrajectoryTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentralityKind {
    Closeness,
    Degree,
}

impl CentralityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CentralityKind::Closeness => "closeness",
            CentralityKind::Degree => "degree",
        }
    }
}

/// Inclusive range of frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub start: u64,
    pub end: u64,
}

impl FrameWindow {
    pub fn new(start: u64, end: u64) -> Self {
        FrameWindow { start, end }
    }

    pub fn len(&self) -> usize {
        if self.end < self.start {
            0
        } else {
            (self.end - self.start + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, t: u64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Discrete centrality samples for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralitySeries {
    pub agent_id: AgentId,
    pub kind: CentralityKind,
    pub values: Vec<(u64, f64)>,
    pub window: FrameWindow,
}

impl CentralitySeries {
    /// Samples whose frame lies in `window`.
    pub fn slice(&self, window: FrameWindow) -> CentralitySeries {
        CentralitySeries {
            agent_id: self.agent_id.clone(),
            kind: self.kind,
            values: self.values.iter().copied().filter(|(t, _)| window.contains(*t)).collect(),
            window,
        }
    }

    pub fn scaled(&self, k: f64) -> CentralitySeries {
        CentralitySeries {
            values: self.values.iter().map(|&(t, v)| (t, v * k)).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost distances from `source`; unreachable vertices are `None`.
pub fn shortest_path_costs(graph: &InstantGraph, source: usize) -> Vec<Option<f64>> {
    let mut dist: Vec<Option<f64>> = vec![None; graph.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = Some(0.0);
    heap.push(HeapItem { dist: 0.0, node: source });
    while let Some(HeapItem { dist: d, node }) = heap.pop() {
        if dist[node].is_some_and(|best| d > best) {
            continue;
        }
        for &(next, cost) in graph.neighbors(node) {
            let cand = d + cost;
            if dist[next].is_none_or(|cur| cand < cur) {
                dist[next] = Some(cand);
                heap.push(HeapItem { dist: cand, node: next });
            }
        }
    }
    dist
}

/// Closeness of vertex `v`, normalised over its own connected component.
fn closeness_of_index(graph: &InstantGraph, v: usize) -> f64 {
    let dist = shortest_path_costs(graph, v);
    let mut reached = 0usize;
    let mut total = 0.0;
    for (j, d) in dist.iter().enumerate() {
        if j == v {
            continue;
        }
        if let Some(d) = d {
            reached += 1;
            total += d;
        }
    }
    if reached == 0 {
        0.0
    } else {
        reached as f64 / total
    }
}

/// `(|C| - 1) / sum of shortest-path costs` over the component `C` of the
/// agent; zero for an isolated agent.
pub fn closeness(graph: &InstantGraph, agent: &AgentId) -> Result<f64> {
    let v = graph.index_of(agent).ok_or_else(|| Error::Lookup(agent.to_string()))?;
    Ok(closeness_of_index(graph, v))
}

/// Closeness of every vertex, in vertex order.
pub fn closeness_all(graph: &InstantGraph) -> Vec<f64> {
    (0..graph.len()).map(|v| closeness_of_index(graph, v)).collect()
}

/// One step of the cumulative degree recursion.
pub fn degree_step(prev: f64, new_neighbor_count: usize) -> f64 {
    prev + new_neighbor_count as f64
}

/// Closeness and degree series of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSeries {
    pub closeness: CentralitySeries,
    pub degree: CentralitySeries,
}

/// Computes closeness (instantaneous graph) and degree (cumulative state)
/// series for every agent present in `window`.
///
/// The degree chain starts from an empty adjacency at `window.start`. A
/// capacity reset zeroes every agent's running degree.
pub fn compute_series(
    table: &TrajectoryTable,
    mu: f64,
    window: FrameWindow,
    capacity: usize,
) -> Result<BTreeMap<AgentId, AgentSeries>> {
    if window.is_empty() {
        return Err(Error::Validation("empty centrality window".into()));
    }
    let (first, last) = table
        .frame_range()
        .ok_or_else(|| Error::Validation("trajectory table is empty".into()))?;
    if window.start < first || window.end > last {
        return Err(Error::Validation(format!(
            "window [{}, {}] outside table range [{first}, {last}]",
            window.start, window.end
        )));
    }

    let frames: Vec<(u64, &[_])> = table
        .frames()
        .range(window.start..=window.end)
        .map(|(&t, v)| (t, v.as_slice()))
        .collect();

    // Graph construction and closeness are independent per frame.
    let per_frame: Vec<(u64, InstantGraph, Vec<f64>)> = frames
        .par_iter()
        .map(|&(t, agents)| {
            let g = build_instant_graph(agents, mu)?;
            let c = closeness_all(&g);
            Ok((t, g, c))
        })
        .collect::<Result<_>>()?;

    let mut state = CumulativeAdjacency::new(capacity)?;
    let mut running: HashMap<AgentId, f64> = HashMap::new();
    let mut out: BTreeMap<AgentId, AgentSeries> = BTreeMap::new();

    for ((t, graph, close), (_, agents)) in per_frame.iter().zip(&frames) {
        let speeds: HashMap<AgentId, f64> = agents.iter().map(|a| (a.agent_id.clone(), a.speed())).collect();
        let (fresh, reset) = state.update(graph, &speeds)?;
        if reset {
            running.values_mut().for_each(|v| *v = 0.0);
        }
        for (idx, (id, _)) in graph.vertices().iter().enumerate() {
            let prev = running.get(id).copied().unwrap_or(0.0);
            let deg = degree_step(prev, fresh[id]);
            running.insert(id.clone(), deg);
            let entry = out.entry(id.clone()).or_insert_with(|| AgentSeries {
                closeness: CentralitySeries {
                    agent_id: id.clone(),
                    kind: CentralityKind::Closeness,
                    values: Vec::new(),
                    window,
                },
                degree: CentralitySeries {
                    agent_id: id.clone(),
                    kind: CentralityKind::Degree,
                    values: Vec::new(),
                    window,
                },
            });
            entry.closeness.values.push((*t, close[idx]));
            entry.degree.values.push((*t, deg));
        }
    }
    Ok(out)
}

/// Writes series as `frame,agent_id,kind,value`, sorted by agent then kind
/// then frame.
pub fn write_series_csv<W: Write>(series: &BTreeMap<AgentId, AgentSeries>, out: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "frame,agent_id,kind,value")?;
    for s in series.values() {
        for cs in [&s.closeness, &s.degree] {
            for (t, v) in &cs.values {
                writeln!(w, "{t},{},{},{v}", cs.agent_id, cs.kind.as_str())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Vec2;

    fn ids(n: usize) -> Vec<AgentId> {
        (0..n).map(|i| AgentId(format!("v{i}"))).collect()
    }

    #[test]
    fn path_graph_closeness() {
        // a-b-c collinear at unit spacing with mu = 1.5: only neighbours join.
        let pts = vec![
            (AgentId::from("a"), Vec2::new(0.0, 0.0)),
            (AgentId::from("b"), Vec2::new(1.0, 0.0)),
            (AgentId::from("c"), Vec2::new(2.0, 0.0)),
        ];
        let g = InstantGraph::from_positions(pts, 1.5).unwrap();
        assert_eq!(closeness(&g, &"b".into()).unwrap(), 1.0);
        assert_eq!(closeness(&g, &"a".into()).unwrap(), 2.0 / 3.0);
        assert_eq!(closeness(&g, &"c".into()).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn triangle_closeness() {
        // Equilateral triangle with side sqrt(2): every cost is 2.
        let s = 2f64.sqrt();
        let pts = vec![
            (AgentId::from("a"), Vec2::new(0.0, 0.0)),
            (AgentId::from("b"), Vec2::new(s, 0.0)),
            (AgentId::from("c"), Vec2::new(s / 2.0, s * 3f64.sqrt() / 2.0)),
        ];
        let g = InstantGraph::from_positions(pts, 3.0).unwrap();
        for e in g.edges() {
            assert!((e.cost - 2.0).abs() < 1e-12);
        }
        for id in ["a", "b", "c"] {
            assert!((closeness(&g, &id.into()).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_vertex_has_zero_closeness() {
        let pts = vec![
            (AgentId::from("a"), Vec2::new(0.0, 0.0)),
            (AgentId::from("b"), Vec2::new(100.0, 0.0)),
        ];
        let g = InstantGraph::from_positions(pts, 10.0).unwrap();
        assert_eq!(closeness(&g, &"a".into()).unwrap(), 0.0);
    }

    #[test]
    fn absent_agent_is_lookup_error() {
        let g = InstantGraph::from_positions(vec![(AgentId::from("a"), Vec2::ZERO)], 10.0).unwrap();
        assert!(matches!(closeness(&g, &"z".into()), Err(Error::Lookup(_))));
    }

    #[test]
    fn star_center_is_most_central() {
        let mut pts = vec![(AgentId::from("hub"), Vec2::ZERO)];
        for (k, id) in ids(6).into_iter().enumerate() {
            let ang = k as f64 * std::f64::consts::TAU / 6.0;
            pts.push((id, Vec2::new(3.0 * ang.cos(), 3.0 * ang.sin())));
        }
        // Hexagon: spokes and rim edges both cost 9.
        let g = InstantGraph::from_positions(pts, 9.5).unwrap();
        let c = closeness_all(&g);
        for leaf in &c[1..] {
            assert!(c[0] > *leaf);
        }
    }

    #[test]
    fn degree_step_accumulates() {
        assert_eq!(degree_step(0.0, 3), 3.0);
        assert_eq!(degree_step(3.0, 0), 3.0);
    }
}
