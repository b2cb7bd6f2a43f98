//! Agent graphs and symmetric doubly stochastic combination weights.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for row/column sums, symmetry and support of a weight matrix.
pub const WEIGHT_TOL: f64 = 1e-10;

pub const SINKHORN_TOL: f64 = 1e-12;
pub const SINKHORN_MAX_ITER: usize = 100_000;

/// Undirected simple graph on agents `0..num_agents`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentGraph {
    num_agents: usize,
    /// Stored as `(min, max)` pairs.
    edges: BTreeSet<(usize, usize)>,
}

impl AgentGraph {
    pub fn new(num_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_agents || b >= num_agents {
                return Err(Error::contract(format!(
                    "edge ({a}, {b}) references an agent outside 0..{num_agents}"
                )));
            }
            if a == b {
                return Err(Error::contract(format!("self-loop on agent {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            num_agents,
            edges: set,
        })
    }

    pub fn path(num_agents: usize) -> Self {
        Self::new(num_agents, (1..num_agents).map(|k| (k - 1, k))).expect("valid path")
    }

    pub fn complete(num_agents: usize) -> Self {
        let edges = (0..num_agents).flat_map(|a| (a + 1..num_agents).map(move |b| (a, b)));
        Self::new(num_agents, edges).expect("valid complete graph")
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_agents];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.num_agents).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; self.num_agents];
        for k in 0..self.num_agents {
            let root = find(&mut parent, k);
            if slot[root] == usize::MAX {
                slot[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[root]].push(k);
        }
        groups
    }

    pub fn is_connected(&self) -> bool {
        self.num_agents > 0 && self.components().len() == 1
    }
}

/// Erdős–Rényi graph, repaired into a single component by joining random
/// members of randomly chosen components. Deterministic given `seed`.
pub fn random_connected_graph(num_agents: usize, edge_prob: f64, seed: u64) -> Result<AgentGraph> {
    if num_agents < 2 {
        return Err(Error::contract(format!(
            "need at least 2 agents, got {num_agents}"
        )));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::contract(format!(
            "edge probability {edge_prob} outside (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for a in 0..num_agents {
        for b in a + 1..num_agents {
            if rng.random::<f64>() < edge_prob {
                edges.push((a, b));
            }
        }
    }
    let mut graph = AgentGraph::new(num_agents, edges)?;
    loop {
        let components = graph.components();
        if components.len() == 1 {
            return Ok(graph);
        }
        let i = rng.random_range(0..components.len());
        let mut j = rng.random_range(0..components.len() - 1);
        if j >= i {
            j += 1;
        }
        let a = *components[i].choose(&mut rng).expect("non-empty component");
        let b = *components[j].choose(&mut rng).expect("non-empty component");
        graph.edges.insert((a.min(b), a.max(b)));
    }
}

/// A connected graph with symmetric doubly stochastic weights `C = [c_lk]`
/// and the cached mixing rate.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTopology {
    graph: AgentGraph,
    weights: DMatrix<f64>,
    lambda: f64,
}

impl NetworkTopology {
    pub fn new(graph: AgentGraph, weights: DMatrix<f64>) -> Result<Self> {
        let k = graph.num_agents();
        if weights.shape() != (k, k) {
            return Err(Error::contract(format!(
                "weight matrix has shape {:?}, expected ({k}, {k})",
                weights.shape()
            )));
        }
        if !graph.is_connected() {
            return Err(Error::contract("agent graph is not connected"));
        }
        for a in 0..k {
            for b in 0..k {
                let c = weights[(a, b)];
                if c < 0.0 || !c.is_finite() {
                    return Err(Error::contract(format!(
                        "weight c[{a},{b}] = {c} is negative"
                    )));
                }
                if a != b && c > WEIGHT_TOL && !graph.has_edge(a, b) {
                    return Err(Error::contract(format!(
                        "weight c[{a},{b}] = {c} on a non-edge"
                    )));
                }
            }
        }
        let lambda = mixing_rate(&weights)?;
        Ok(Self {
            graph,
            weights,
            lambda,
        })
    }

    pub fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    pub fn num_agents(&self) -> usize {
        self.graph.num_agents()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// `c_{lk}`: weight agent `k` assigns to agent `l`.
    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.weights[(l, k)]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn to_document(&self) -> TopologyDocument {
        let k = self.num_agents();
        TopologyDocument {
            num_agents: k,
            edges: self.graph.edges().map(|(a, b)| [a, b]).collect(),
            weights: (0..k)
                .map(|r| (0..k).map(|c| self.weights[(r, c)]).collect())
                .collect(),
            lambda: self.lambda,
        }
    }

    pub fn from_document(doc: &TopologyDocument) -> Result<Self> {
        let graph = AgentGraph::new(doc.num_agents, doc.edges.iter().map(|e| (e[0], e[1])))?;
        let k = doc.num_agents;
        if doc.weights.len() != k || doc.weights.iter().any(|row| row.len() != k) {
            return Err(Error::contract(format!("weights must be a {k}x{k} array")));
        }
        let weights = DMatrix::from_fn(k, k, |r, c| doc.weights[r][c]);
        Self::new(graph, weights)
    }
}

/// JSON form of a topology: edge list, dense weights and mixing rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    pub num_agents: usize,
    pub edges: Vec<[usize; 2]>,
    pub weights: Vec<Vec<f64>>,
    pub lambda: f64,
}

/// Which rule turns a graph into combination weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightRule {
    Metropolis,
    Uniform,
}

impl fmt::Display for WeightRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightRule::Metropolis => "metropolis",
            WeightRule::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for WeightRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metropolis" => Ok(WeightRule::Metropolis),
            "uniform" => Ok(WeightRule::Uniform),
            other => Err(Error::config(
                "graph",
                format!("unknown weight rule `{other}`"),
            )),
        }
    }
}

impl WeightRule {
    pub fn build(self, graph: AgentGraph, seed: u64) -> Result<NetworkTopology> {
        match self {
            WeightRule::Metropolis => metropolis_weights(graph),
            WeightRule::Uniform => {
                sinkhorn_uniform_weights(graph, seed, SINKHORN_TOL, SINKHORN_MAX_ITER)
            }
        }
    }
}

/// `c_lk = 1 / (1 + max(deg l, deg k))` on edges, remainder on the diagonal.
pub fn metropolis_weights(graph: AgentGraph) -> Result<NetworkTopology> {
    let k = graph.num_agents();
    let deg = graph.degrees();
    let mut c = DMatrix::zeros(k, k);
    for (a, b) in graph.edges() {
        let w = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        c[(a, b)] = w;
        c[(b, a)] = w;
    }
    for a in 0..k {
        let off: f64 = (0..k).filter(|&b| b != a).map(|b| c[(b, a)]).sum();
        c[(a, a)] = 1.0 - off;
    }
    NetworkTopology::new(graph, c)
}

/// Random uniform(0, 1] weights on edges and self-loops, balanced to doubly
/// stochastic by alternating row and column normalization.
pub fn sinkhorn_uniform_weights(
    graph: AgentGraph,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<NetworkTopology> {
    let k = graph.num_agents();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = DMatrix::zeros(k, k);
    for a in 0..k {
        c[(a, a)] = 1.0 - rng.random::<f64>();
    }
    for (a, b) in graph.edges() {
        let w = 1.0 - rng.random::<f64>();
        c[(a, b)] = w;
        c[(b, a)] = w;
    }

    let mut deviation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for mut row in c.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        for mut col in c.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        deviation = max_sum_deviation(&c);
        if deviation < tol {
            break;
        }
    }
    if !(deviation < tol) {
        return Err(Error::Sinkhorn {
            iterations,
            deviation,
        });
    }

    let mut sym = (&c + c.transpose()) * 0.5;
    let sums: Vec<f64> = sym.row_iter().map(|r| r.sum()).collect();
    for a in 0..k {
        for b in 0..k {
            sym[(a, b)] /= (sums[a] * sums[b]).sqrt();
        }
    }
    NetworkTopology::new(graph, sym)
}

fn max_sum_deviation(c: &DMatrix<f64>) -> f64 {
    let rows = c.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = c.column_iter().map(|col| (col.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Spectral radius of `C - (1/K) 1 1^T` for a symmetric doubly stochastic `C`.
pub fn mixing_rate(c: &DMatrix<f64>) -> Result<f64> {
    let k = c.nrows();
    if k == 0 || c.ncols() != k {
        return Err(Error::contract(format!(
            "weight matrix must be square, got {:?}",
            c.shape()
        )));
    }
    let asym = (c - c.transpose()).amax();
    if asym > WEIGHT_TOL {
        return Err(Error::contract(format!(
            "weight matrix is not symmetric ({asym:e})"
        )));
    }
    let dev = max_sum_deviation(c);
    if dev > WEIGHT_TOL {
        return Err(Error::contract(format!(
            "weight matrix is not doubly stochastic (max row/column sum deviation {dev:e})"
        )));
    }
    let shifted = c.map(|v| v - 1.0 / k as f64);
    let sym = (&shifted + shifted.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn check_invariants(top: &NetworkTopology, tol: f64) {
        let c = top.weights();
        assert!(max_sum_deviation(c) <= tol);
        assert!((c - c.transpose()).amax() <= tol);
        for a in 0..top.num_agents() {
            assert!(c[(a, a)] > 0.0);
            for b in 0..top.num_agents() {
                assert!(c[(a, b)] >= 0.0);
                if a != b && !top.graph().has_edge(a, b) {
                    assert_eq!(c[(a, b)], 0.0);
                }
            }
        }
        assert!(top.lambda() < 1.0);
    }

    #[test]
    fn two_agents_always_joined() {
        for seed in 0..20 {
            let g = random_connected_graph(2, 0.05, seed).unwrap();
            assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        }
    }

    #[test]
    fn random_graph_connected_and_deterministic() {
        let a = random_connected_graph(20, 0.2, 7).unwrap();
        let b = random_connected_graph(20, 0.2, 7).unwrap();
        assert!(a.is_connected());
        assert_eq!(a, b);
        let c = random_connected_graph(20, 0.2, 8).unwrap();
        assert_ne!(a, c);
        // Sparse draws need repair.
        for seed in 0..20 {
            assert!(random_connected_graph(30, 0.01, seed)
                .unwrap()
                .is_connected());
        }
    }

    #[test]
    fn full_probability_gives_complete_graph() {
        let g = random_connected_graph(5, 1.0, 3).unwrap();
        assert_eq!(g.num_edges(), 10);
    }

    #[test]
    fn random_graph_rejects_bad_input() {
        assert!(random_connected_graph(1, 0.5, 0).is_err());
        assert!(random_connected_graph(4, 0.0, 0).is_err());
    }

    #[test]
    fn metropolis_path_three() {
        let top = metropolis_weights(AgentGraph::path(3)).unwrap();
        let c = top.weights();
        assert_relative_eq!(c[(0, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(c[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(c[(1, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(c[(0, 2)], 0.0);
        assert!((top.lambda() - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn metropolis_two_agents() {
        let top = metropolis_weights(AgentGraph::complete(2)).unwrap();
        assert_eq!(top.weights(), &DMatrix::from_element(2, 2, 0.5));
        assert!(top.lambda().abs() < 1e-15);
    }

    #[test]
    fn metropolis_invariants_on_random_graphs() {
        for seed in 0..30 {
            let g = random_connected_graph(20, 0.2, seed).unwrap();
            check_invariants(&metropolis_weights(g).unwrap(), 1e-12);
        }
    }

    #[test]
    fn sinkhorn_two_agents() {
        let top =
            sinkhorn_uniform_weights(AgentGraph::complete(2), 1, SINKHORN_TOL, SINKHORN_MAX_ITER)
                .unwrap();
        let c = top.weights();
        let a = c[(0, 0)];
        assert!(a > 0.0 && a < 1.0);
        assert!((c[(1, 1)] - a).abs() < 1e-10);
        assert!((c[(0, 1)] - (1.0 - a)).abs() < 1e-10);
    }

    #[test]
    fn sinkhorn_invariants_and_determinism() {
        let g = random_connected_graph(20, 0.2, 7).unwrap();
        let a = sinkhorn_uniform_weights(g.clone(), 7, SINKHORN_TOL, SINKHORN_MAX_ITER).unwrap();
        let b = sinkhorn_uniform_weights(g, 7, SINKHORN_TOL, SINKHORN_MAX_ITER).unwrap();
        check_invariants(&a, 1e-10);
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let g = random_connected_graph(10, 0.3, 1).unwrap();
        match sinkhorn_uniform_weights(g, 1, 1e-14, 1) {
            Err(Error::Sinkhorn {
                iterations,
                deviation,
            }) => {
                assert_eq!(iterations, 1);
                assert!(deviation > 1e-14);
            }
            other => panic!("expected Sinkhorn error, got {other:?}"),
        }
    }

    #[test]
    fn uniform_averaging_has_zero_mixing_rate() {
        let k = 6;
        let c = DMatrix::from_element(k, k, 1.0 / k as f64);
        assert!(mixing_rate(&c).unwrap() < 1e-15);
    }

    #[test]
    fn mixing_rate_rejects_invalid_weights() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.3, 0.7]);
        assert!(mixing_rate(&asym).unwrap_err().is_contract());
        let not_stochastic = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.4, 0.5]);
        assert!(mixing_rate(&not_stochastic).unwrap_err().is_contract());
    }

    #[test]
    fn topology_rejects_weights_off_support() {
        let c = DMatrix::from_element(3, 3, 1.0 / 3.0);
        assert!(NetworkTopology::new(AgentGraph::path(3), c)
            .unwrap_err()
            .is_contract());
        let disconnected = AgentGraph::new(3, [(0, 1)]).unwrap();
        assert!(NetworkTopology::new(disconnected, DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn document_roundtrip() {
        let g = random_connected_graph(8, 0.4, 2).unwrap();
        let top = metropolis_weights(g).unwrap();
        let json = serde_json::to_string(&top.to_document()).unwrap();
        let doc: TopologyDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(NetworkTopology::from_document(&doc).unwrap(), top);
    }
}
