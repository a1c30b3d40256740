//! Shortest paths, eccentricities, Laplacian features and spectral radius.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;

/// BFS distances from `src`. Unreachable nodes get the sentinel `n`,
/// strictly greater than any finite path length, so the result stays
/// integer-typed.
pub fn bfs_distances(g: &Graph, src: usize) -> Vec<usize> {
    let n = g.n();
    let mut dist = vec![n; n];
    let mut queue = VecDeque::new();
    dist[src] = 0;
    queue.push_back(src);
    while let Some(v) = queue.pop_front() {
        for &w in g.neighbors(v) {
            if dist[w] == n {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// BFS from every node; symmetric with zero diagonal, sentinel `n` for
/// unreachable pairs.
pub fn all_pairs_shortest_paths(g: &Graph) -> Vec<Vec<usize>> {
    (0..g.n()).map(|i| bfs_distances(g, i)).collect()
}

/// Regression targets for the multi-task benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskTargets {
    /// Distance from the source node, sentinel `n` where unreachable.
    pub dist: Vec<f64>,
    /// Per-node eccentricity within the node's own component.
    pub ecc: Vec<f64>,
    /// Laplacian features `(D - A) x`.
    pub lap: Vec<f64>,
    pub connected: bool,
    /// Maximum eccentricity over the source's component.
    pub diameter: f64,
    /// Largest absolute adjacency eigenvalue.
    pub radius: f64,
}

/// Computes all six targets. Disconnected graphs are allowed: distances to
/// unreachable nodes use the sentinel `n`, while eccentricity and diameter
/// are taken within components so they stay finite.
pub fn multitask_targets(g: &Graph, source: usize, x: &[f64]) -> MultitaskTargets {
    let n = g.n();
    assert_eq!(x.len(), n, "Laplacian input length");
    let apsp = all_pairs_shortest_paths(g);
    let dist: Vec<f64> = apsp[source].iter().map(|&d| d as f64).collect();
    let ecc: Vec<f64> = (0..n)
        .map(|i| {
            apsp[i]
                .iter()
                .filter(|&&d| d < n)
                .max()
                .copied()
                .unwrap_or(0) as f64
        })
        .collect();
    let mut lap = vec![0.0; n];
    for i in 0..n {
        lap[i] = g.degree(i) as f64 * x[i];
        for &j in g.neighbors(i) {
            lap[i] -= x[j];
        }
    }
    let connected = n == 0 || apsp[source].iter().all(|&d| d < n);
    let diameter = (0..n)
        .filter(|&i| apsp[source][i] < n)
        .map(|i| ecc[i])
        .fold(0.0, f64::max);
    MultitaskTargets {
        dist,
        ecc,
        lap,
        connected,
        diameter,
        radius: spectral_radius(g),
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Largest absolute adjacency eigenvalue: seeded power iteration first,
/// falling back to a dense symmetric eigensolve for n <= 64 if the
/// iteration has not converged.
pub fn spectral_radius(g: &Graph) -> f64 {
    match spectral_radius_power(g) {
        Some(r) => r,
        None if g.n() <= 64 => spectral_radius_dense(g),
        None => spectral_radius_dense(g), // best effort beyond the guard
    }
}

/// Power iteration on A^2 (A^2 is PSD, so the iteration converges even for
/// bipartite graphs whose top eigenvalues come in +/- pairs). Returns None
/// when the Rayleigh quotient has not stabilized to `1e-10` within 10,000
/// iterations.
pub fn spectral_radius_power(g: &Graph) -> Option<f64> {
    let n = g.n();
    if g.edge_count() == 0 {
        return Some(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5bec_7a19);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut prev = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let av = mat_vec(g, &v);
        let aav = mat_vec(g, &av);
        // Rayleigh quotient of A^2 at v with ||v|| = 1.
        let lambda_sq: f64 = v.iter().zip(&aav).map(|(a, b)| a * b).sum();
        let norm = aav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Some(0.0);
        }
        v = aav;
        for x in &mut v {
            *x /= norm;
        }
        if (lambda_sq - prev).abs() <= POWER_TOL * lambda_sq.abs().max(1.0) {
            return Some(lambda_sq.max(0.0).sqrt());
        }
        prev = lambda_sq;
    }
    None
}

/// Dense symmetric eigensolve route.
pub fn spectral_radius_dense(g: &Graph) -> f64 {
    let n = g.n();
    if n == 0 {
        return 0.0;
    }
    let a = g.adjacency_matrix();
    let m = DMatrix::from_fn(n, n, |i, j| a[i * n + j]);
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
}

fn mat_vec(g: &Graph, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n()];
    for i in 0..g.n() {
        for &j in g.neighbors(i) {
            out[i] += v[j];
        }
    }
    out
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_distances_by_hand() {
        let g = Graph::path(3);
        let apsp = all_pairs_shortest_paths(&g);
        assert_eq!(apsp, vec![vec![0, 1, 2], vec![1, 0, 1], vec![2, 1, 0]]);
    }

    #[test]
    fn isolated_nodes_use_sentinel() {
        let g = Graph::new(2, &[]).unwrap();
        let apsp = all_pairs_shortest_paths(&g);
        assert_eq!(apsp[0][1], 2);
        assert_eq!(apsp[1][0], 2);
    }

    #[test]
    fn complete_graph_distances_are_one() {
        let g = Graph::complete(3);
        let apsp = all_pairs_shortest_paths(&g);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(apsp[i][j], usize::from(i != j));
            }
        }
    }

    #[test]
    fn path_multitask_targets() {
        let g = Graph::path(3);
        let t = multitask_targets(&g, 0, &[1.0, 1.0, 1.0]);
        assert_eq!(t.dist, vec![0.0, 1.0, 2.0]);
        assert_eq!(t.ecc, vec![2.0, 1.0, 2.0]);
        // L 1 = 0 because row sums of the Laplacian vanish.
        assert_eq!(t.lap, vec![0.0, 0.0, 0.0]);
        assert!(t.connected);
        assert_eq!(t.diameter, 2.0);
    }

    #[test]
    fn cycle_spectral_radius_is_two() {
        let g = Graph::cycle(6);
        assert!((spectral_radius(&g) - 2.0).abs() <= 1e-8);
        assert!((spectral_radius_dense(&g) - 2.0).abs() <= 1e-10);
    }

    #[test]
    fn single_edge_spectral_radius_is_one() {
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        assert!((spectral_radius(&g) - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn disconnected_multitask_targets_stay_finite() {
        // Two components: a triangle and an isolated edge.
        let g = Graph::new(5, &[(0, 1), (1, 2), (0, 2), (3, 4)]).unwrap();
        let t = multitask_targets(&g, 0, &[0.0; 5]);
        assert!(!t.connected);
        assert_eq!(t.dist[3], 5.0);
        assert_eq!(t.ecc[3], 1.0);
        assert_eq!(t.diameter, 1.0); // source component is the triangle
        assert!(t.lap.iter().all(|v| v.is_finite()));
    }
}
