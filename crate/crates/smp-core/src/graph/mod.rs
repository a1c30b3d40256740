//! Graph data types, permutation actions and graph-theoretic oracles.

mod cycles;
mod paths;
mod receptive;

pub use cycles::{count_k_cycles, find_k_cycle, has_k_cycle};
pub use paths::{
    all_pairs_shortest_paths, bfs_distances, multitask_targets, spectral_radius,
    spectral_radius_dense, spectral_radius_power, MultitaskTargets,
};
pub use receptive::{receptive_field, receptive_field_recursion, trace_power};

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type EdgeFeatures = BTreeMap<(usize, usize), Vec<f64>>;

/// An undirected simple graph with optional node and edge features.
///
/// Edges are stored as `(i, j)` with `i < j`, sorted and deduplicated;
/// adjacency lists are precomputed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    node_features: Option<Vec<Vec<f64>>>,
    edge_features: Option<EdgeFeatures>,
}

impl Graph {
    /// Builds a graph, normalizing edge orientation and rejecting
    /// self-loops and out-of-range endpoints. Duplicates are merged.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(GraphError::InvalidArgument(format!("self-loop at {a}")));
            }
            if a >= n || b >= n {
                return Err(GraphError::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range for n = {n}"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &normalized {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        Ok(Graph {
            n,
            edges: normalized,
            adjacency,
            node_features: None,
            edge_features: None,
        })
    }

    pub fn with_node_features(mut self, x: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        if x.len() != self.n {
            return Err(GraphError::DimensionMismatch(format!(
                "{} feature rows for {} nodes",
                x.len(),
                self.n
            )));
        }
        let width = x.first().map_or(0, |row| row.len());
        if x.iter().any(|row| row.len() != width) {
            return Err(GraphError::DimensionMismatch(
                "ragged node feature rows".into(),
            ));
        }
        self.node_features = Some(x);
        Ok(self)
    }

    pub fn with_edge_features(mut self, y: EdgeFeatures) -> Result<Self, GraphError> {
        for &(i, j) in y.keys() {
            if !self.edges.contains(&(i.min(j), i.max(j))) {
                return Err(GraphError::InvalidArgument(format!(
                    "edge feature on non-edge ({i}, {j})"
                )));
            }
        }
        self.edge_features = Some(y);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn d_max(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Average degree `2|E|/n`, 0 for the empty graph.
    pub fn d_avg(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.n as f64
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).is_ok()
    }

    pub fn node_features(&self) -> Option<&[Vec<f64>]> {
        self.node_features.as_deref()
    }

    pub fn node_feature_width(&self) -> usize {
        self.node_features
            .as_ref()
            .and_then(|x| x.first())
            .map_or(0, Vec::len)
    }

    pub fn edge_features(&self) -> Option<&EdgeFeatures> {
        self.edge_features.as_ref()
    }

    pub fn edge_feature_width(&self) -> usize {
        self.edge_features
            .as_ref()
            .and_then(|y| y.values().next())
            .map_or(0, Vec::len)
    }

    /// Feature vector of edge `(a, b)` regardless of orientation.
    pub fn edge_feature(&self, a: usize, b: usize) -> Option<&[f64]> {
        self.edge_features
            .as_ref()
            .and_then(|y| y.get(&(a.min(b), a.max(b))))
            .map(Vec::as_slice)
    }

    /// Dense 0/1 adjacency matrix, row-major.
    pub fn adjacency_matrix(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for &(i, j) in &self.edges {
            a[i * self.n + j] = 1.0;
            a[j * self.n + i] = 1.0;
        }
        a
    }

    /// Erdos-Renyi G(n, p) with each pair drawn independently.
    pub fn random_er(n: usize, p: f64, rng: &mut impl Rng) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Graph::new(n, &edges).expect("generated edges are valid")
    }

    /// Uniform random labeled tree via a Pruefer sequence.
    pub fn random_tree(n: usize, rng: &mut impl Rng) -> Self {
        if n <= 1 {
            return Graph::new(n, &[]).unwrap();
        }
        if n == 2 {
            return Graph::new(2, &[(0, 1)]).unwrap();
        }
        let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut edges = Vec::with_capacity(n - 1);
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).expect("tree has a leaf");
            edges.push((leaf, s));
            degree[leaf] = 0;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        edges.push((rest[0], rest[1]));
        Graph::new(n, &edges).expect("tree edges are valid")
    }

    /// Cycle graph 0-1-...-(n-1)-0.
    pub fn cycle(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, &edges).unwrap()
    }

    /// Path graph 0-1-...-(n-1).
    pub fn path(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, &edges).unwrap()
    }

    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j));
            }
        }
        Graph::new(n, &edges).unwrap()
    }

    /// Disjoint union, relabeling the second graph's nodes upward.
    pub fn disjoint_union(&self, other: &Graph) -> Self {
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(i, j)| (i + self.n, j + self.n)));
        Graph::new(self.n + other.n, &edges).unwrap()
    }
}

/// A bijection on node indices. `forward[i]` is the new index of node i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
}

impl Permutation {
    pub fn new(forward: Vec<usize>) -> Result<Self, GraphError> {
        let n = forward.len();
        let mut seen = vec![false; n];
        for &v in &forward {
            if v >= n || seen[v] {
                return Err(GraphError::InvalidArgument(
                    "mapping is not a bijection".into(),
                ));
            }
            seen[v] = true;
        }
        Ok(Permutation { forward })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            forward: (0..n).collect(),
        }
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut forward: Vec<usize> = (0..n).collect();
        // Fisher-Yates.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            forward.swap(i, j);
        }
        Permutation { forward }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.forward[i]
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.forward.len()];
        for (i, &v) in self.forward.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { forward: inv }
    }

    /// Composition acting as `self` after `other`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        assert_eq!(self.len(), other.len(), "composing unequal permutations");
        Permutation {
            forward: other.forward.iter().map(|&v| self.forward[v]).collect(),
        }
    }

    fn check_len(&self, n: usize, what: &str) -> Result<(), GraphError> {
        if self.len() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "permutation of length {} applied to {what} with node dimension {n}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Rows of an `[n, c]` matrix: row i moves to row `forward[i]`.
    pub fn apply_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GraphError> {
        self.check_len(rows.len(), "row matrix")?;
        let mut out = vec![Vec::new(); rows.len()];
        for (i, row) in rows.iter().enumerate() {
            out[self.forward[i]] = row.clone();
        }
        Ok(out)
    }

    /// Flat `[n, c]` matrix over node rows.
    pub fn apply_flat_rows(&self, data: &[f64], n: usize, c: usize) -> Result<Vec<f64>, GraphError> {
        self.check_len(n, "flat row matrix")?;
        assert_eq!(data.len(), n * c);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let dst = self.forward[i] * c;
            out[dst..dst + c].copy_from_slice(&data[i * c..(i + 1) * c]);
        }
        Ok(out)
    }

    /// Square `[n, n]` matrix over node pairs: both axes move.
    pub fn apply_matrix(&self, data: &[f64], n: usize) -> Result<Vec<f64>, GraphError> {
        self.check_len(n, "square matrix")?;
        assert_eq!(data.len(), n * n);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[self.forward[i] * n + self.forward[j]] = data[i * n + j];
            }
        }
        Ok(out)
    }

    /// `[n, n, c]` tensor: the first two axes move, channels stay.
    pub fn apply_tensor3(&self, data: &[f64], n: usize, c: usize) -> Result<Vec<f64>, GraphError> {
        self.check_len(n, "3-tensor")?;
        assert_eq!(data.len(), n * n * c);
        let mut out = vec![0.0; n * n * c];
        for i in 0..n {
            for j in 0..n {
                let src = (i * n + j) * c;
                let dst = (self.forward[i] * n + self.forward[j]) * c;
                out[dst..dst + c].copy_from_slice(&data[src..src + c]);
            }
        }
        Ok(out)
    }

    /// Relabels edge endpoints and feature rows of a graph.
    pub fn apply_graph(&self, g: &Graph) -> Result<Graph, GraphError> {
        self.check_len(g.n(), "graph")?;
        let edges: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .map(|&(i, j)| (self.forward[i], self.forward[j]))
            .collect();
        let mut out = Graph::new(g.n(), &edges)?;
        if let Some(x) = g.node_features() {
            out = out.with_node_features(self.apply_rows(x)?)?;
        }
        if let Some(y) = g.edge_features() {
            let mapped: EdgeFeatures = y
                .iter()
                .map(|(&(i, j), f)| {
                    let (a, b) = (self.forward[i], self.forward[j]);
                    ((a.min(b), a.max(b)), f.clone())
                })
                .collect();
            out = out.with_edge_features(mapped)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constructor_normalizes_and_dedups() {
        let g = Graph::new(4, &[(2, 1), (1, 2), (0, 3)]).unwrap();
        assert_eq!(g.edges(), &[(0, 3), (1, 2)]);
        assert!(g.has_edge(2, 1));
        assert_eq!(g.d_avg(), 1.0);
    }

    #[test]
    fn self_loops_are_rejected() {
        assert!(Graph::new(3, &[(1, 1)]).is_err());
        assert!(Graph::new(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn identity_permutation_fixes_objects() {
        let g = Graph::path(4);
        let p = Permutation::identity(4);
        assert_eq!(p.apply_graph(&g).unwrap(), g);
        let m = g.adjacency_matrix();
        assert_eq!(p.apply_matrix(&m, 4).unwrap(), m);
    }

    #[test]
    fn swapping_k2_leaves_adjacency_unchanged() {
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let p = Permutation::new(vec![1, 0]).unwrap();
        let a = g.adjacency_matrix();
        assert_eq!(p.apply_matrix(&a, 2).unwrap(), a);
    }

    #[test]
    fn cyclic_shift_moves_rows() {
        // pi: 0 -> 1 -> 2 -> 0 sends row i to row i+1 mod 3.
        let p = Permutation::new(vec![1, 2, 0]).unwrap();
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let out = p.apply_rows(&rows).unwrap();
        assert_eq!(out, vec![vec![3.0], vec![1.0], vec![2.0]]);
    }

    #[test]
    fn length_mismatch_is_a_dimension_error() {
        let p = Permutation::identity(3);
        let rows = vec![vec![1.0]; 4];
        assert!(matches!(
            p.apply_rows(&rows),
            Err(GraphError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.random_range(2..9);
            let p1 = Permutation::random(n, &mut rng);
            let p2 = Permutation::random(n, &mut rng);
            let data: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let sequential = p2
                .apply_matrix(&p1.apply_matrix(&data, n).unwrap(), n)
                .unwrap();
            let composed = p2.compose(&p1).apply_matrix(&data, n).unwrap();
            assert_eq!(sequential, composed);
        }
    }

    #[test]
    fn permuted_graph_has_permuted_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let n = rng.random_range(2..9);
            let g = Graph::random_er(n, 0.4, &mut rng);
            let p = Permutation::random(n, &mut rng);
            let permuted = p.apply_graph(&g).unwrap();
            assert_eq!(
                permuted.adjacency_matrix(),
                p.apply_matrix(&g.adjacency_matrix(), n).unwrap()
            );
        }
    }

    #[test]
    fn random_tree_is_connected_and_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..20 {
            let t = Graph::random_tree(n, &mut rng);
            assert_eq!(t.edge_count(), n - 1);
            let dist = bfs_distances(&t, 0);
            assert!(dist.iter().all(|&d| d < n));
        }
    }
}
