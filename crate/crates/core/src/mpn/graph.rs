//! Communication graphs between agents.

use serde::{Deserialize, Serialize};

use super::MpnError;

/// A directed edge: `dst` receives a message computed from `src`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub dst: usize,
    pub src: usize,
}

/// How incoming messages are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Each incoming message weighted by `1 / in_degree`.
    #[default]
    Mean,
    /// Plain sum.
    Sum,
}

/// Agents at integer grid positions connected by directed edges.
///
/// Edges are kept sorted by `(dst, src)`, which fixes the order in which each
/// agent sums its inbox.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    positions: Vec<[i64; 2]>,
    edges: Vec<Edge>,
    edge_features: Vec<[f64; 2]>,
    weights: Vec<f64>,
    aggregation: Aggregation,
}

impl CommGraph {
    pub fn new(positions: Vec<[i64; 2]>, edges: Vec<Edge>, aggregation: Aggregation) -> Result<Self, MpnError> {
        let n = positions.len();
        let mut edges = edges;
        for e in &edges {
            if e.dst >= n || e.src >= n {
                return Err(MpnError::UnknownAgent {
                    agent: e.dst.max(e.src),
                    agents: n,
                });
            }
        }
        edges.sort();
        edges.dedup();
        let edge_features = edges
            .iter()
            .map(|e| {
                let (xi, xj) = (positions[e.dst], positions[e.src]);
                [(xi[0] - xj[0]) as f64, (xi[1] - xj[1]) as f64]
            })
            .collect();
        let mut in_degree = vec![0usize; n];
        for e in &edges {
            in_degree[e.dst] += 1;
        }
        let weights = edges
            .iter()
            .map(|e| match aggregation {
                Aggregation::Mean => 1.0 / in_degree[e.dst] as f64,
                Aggregation::Sum => 1.0,
            })
            .collect();
        Ok(Self {
            positions,
            edges,
            edge_features,
            weights,
            aggregation,
        })
    }

    /// Connects every ordered pair of distinct agents whose positions differ by
    /// at most `radius` in both coordinates (no wrap-around).
    pub fn within_radius(positions: Vec<[i64; 2]>, radius: i64, aggregation: Aggregation) -> Self {
        let n = positions.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (a, b) = (positions[i], positions[j]);
                if (a[0] - b[0]).abs() <= radius && (a[1] - b[1]).abs() <= radius {
                    edges.push(Edge { dst: i, src: j });
                }
            }
        }
        Self::new(positions, edges, aggregation).expect("indices are in range by construction")
    }

    /// A graph without edges.
    pub fn isolated(positions: Vec<[i64; 2]>) -> Self {
        Self::new(positions, Vec::new(), Aggregation::Mean).expect("no edges to validate")
    }

    pub fn num_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[i64; 2]] {
        &self.positions
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `e_ij = x_i − x_j` for each edge, in edge order.
    pub fn edge_features(&self) -> &[[f64; 2]] {
        &self.edge_features
    }

    /// Aggregation weight of each edge, in edge order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    /// Indices into [`edges`](Self::edges) of the edges delivered to `agent`,
    /// in ascending sender order.
    pub fn incoming(&self, agent: usize) -> std::ops::Range<usize> {
        let start = self.edges.partition_point(|e| e.dst < agent);
        let end = self.edges.partition_point(|e| e.dst <= agent);
        start..end
    }

    pub fn is_edge(&self, dst: usize, src: usize) -> bool {
        self.edges.binary_search(&Edge { dst, src }).is_ok()
    }

    /// Renames agents so that agent `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut positions = vec![[0; 2]; self.num_agents()];
        for (i, &p) in perm.iter().enumerate() {
            positions[p] = self.positions[i];
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                dst: perm[e.dst],
                src: perm[e.src],
            })
            .collect();
        Self::new(positions, edges, self.aggregation).expect("relabeling preserves validity")
    }

    /// Moves every agent to a new position and renames agent `i` to `perm[i]`,
    /// keeping the same edges.
    pub fn map_positions(&self, perm: &[usize], f: impl Fn([i64; 2]) -> [i64; 2]) -> Self {
        let g = self.relabel(perm);
        let positions = g.positions.iter().map(|&p| f(p)).collect();
        Self::new(positions, g.edges, self.aggregation).expect("same edges")
    }

    /// JSON dump of positions, edges and edge features.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MpnError> {
        let g: Self = serde_json::from_str(s).map_err(|e| MpnError::Format(e.to_string()))?;
        Self::new(g.positions, g.edges, g.aggregation)
    }
}

/// Several graphs merged into one by offsetting agent indices.
#[derive(Clone, Debug, Default)]
pub struct GraphBatch {
    pub num_agents: usize,
    /// `(dst, src, weight, edge feature)` with global agent indices.
    pub edges: Vec<(usize, usize, f64, [f64; 2])>,
}

impl GraphBatch {
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a CommGraph>) -> Self {
        let mut batch = Self::default();
        for g in graphs {
            batch.push(g);
        }
        batch
    }

    pub fn push(&mut self, g: &CommGraph) {
        let off = self.num_agents;
        for (k, e) in g.edges().iter().enumerate() {
            self.edges
                .push((e.dst + off, e.src + off, g.weights()[k], g.edge_features()[k]));
        }
        self.num_agents += g.num_agents();
    }
}
