//! Receptive fields of message passing and integer adjacency powers.

use super::{bfs_distances, Graph};

/// Binary n x n matrix of the receptive field of node `i` after `l` rounds:
/// edges `(p, q)` with `d(i,p) <= l`, `d(i,q) <= l` and `d(i,p) + d(i,q) < 2l`.
pub fn receptive_field(g: &Graph, i: usize, l: usize) -> Vec<bool> {
    assert!(l >= 1, "receptive field needs at least one layer");
    let n = g.n();
    let dist = bfs_distances(g, i);
    let mut field = vec![false; n * n];
    for &(p, q) in g.edges() {
        // dist == n is the unreachable sentinel, i.e. infinite.
        if dist[p] < n && dist[q] < n && dist[p] <= l && dist[q] <= l && dist[p] + dist[q] < 2 * l
        {
            field[p * n + q] = true;
            field[q * n + p] = true;
        }
    }
    field
}

/// Receptive fields for every node via element-wise max propagation:
/// starting from each node's star, every round replaces node i's matrix by
/// the max over itself and its neighbors. Independent of [`receptive_field`]
/// and must agree with it exactly.
pub fn receptive_field_recursion(g: &Graph, l: usize) -> Vec<Vec<bool>> {
    assert!(l >= 1, "recursion needs at least one layer");
    let n = g.n();
    // Round 1: the star at each node.
    let mut state: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            let mut star = vec![false; n * n];
            for &j in g.neighbors(i) {
                star[i * n + j] = true;
                star[j * n + i] = true;
            }
            star
        })
        .collect();
    for _ in 1..l {
        let mut next = state.clone();
        for i in 0..n {
            for &j in g.neighbors(i) {
                for (cell, &other) in next[i].iter_mut().zip(&state[j]) {
                    *cell |= other;
                }
            }
        }
        state = next;
    }
    state
}

/// Exact `trace(A^p)` via repeated integer matrix multiplication.
pub fn trace_power(g: &Graph, p: usize) -> i64 {
    assert!(p >= 1, "power must be at least 1");
    let n = g.n();
    let mut a = vec![0i64; n * n];
    for &(i, j) in g.edges() {
        a[i * n + j] = 1;
        a[j * n + i] = 1;
    }
    let mut acc = a.clone();
    for _ in 1..p {
        let mut next = vec![0i64; n * n];
        for i in 0..n {
            for k in 0..n {
                let v = acc[i * n + k];
                if v == 0 {
                    continue;
                }
                for j in 0..n {
                    next[i * n + j] += v * a[k * n + j];
                }
            }
        }
        acc = next;
    }
    (0..n).map(|i| acc[i * n + i]).sum()
}
