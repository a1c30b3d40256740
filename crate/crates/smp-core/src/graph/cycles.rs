//! Exact simple-cycle counting by exhaustive DFS.

use super::{Graph, GraphError};

/// Counts simple cycles of length exactly `k`, each counted once.
///
/// Enumeration is canonical: every cycle is visited rooted at its smallest
/// vertex, walking towards the smaller of the two possible second vertices,
/// which is the lexicographically least rotation/reflection of its vertex
/// sequence.
pub fn count_k_cycles(g: &Graph, k: usize) -> Result<u64, GraphError> {
    let mut count = 0u64;
    walk_cycles(g, k, &mut |_| {
        count += 1;
        true
    })?;
    Ok(count)
}

/// Whether any simple `k`-cycle exists (early-exit version of the count).
pub fn has_k_cycle(g: &Graph, k: usize) -> Result<bool, GraphError> {
    let mut found = false;
    walk_cycles(g, k, &mut |_| {
        found = true;
        false
    })?;
    Ok(found)
}

/// Returns some simple `k`-cycle as a vertex sequence, if one exists.
pub fn find_k_cycle(g: &Graph, k: usize) -> Result<Option<Vec<usize>>, GraphError> {
    let mut cycle = None;
    walk_cycles(g, k, &mut |path| {
        cycle = Some(path.to_vec());
        false
    })?;
    Ok(cycle)
}

/// Depth-first enumeration; `visit` gets each canonical cycle and returns
/// whether to keep going.
fn walk_cycles(
    g: &Graph,
    k: usize,
    visit: &mut impl FnMut(&[usize]) -> bool,
) -> Result<(), GraphError> {
    if k < 3 || k > g.n() {
        return Err(GraphError::InvalidArgument(format!(
            "cycle length {k} outside [3, {}]",
            g.n()
        )));
    }
    let n = g.n();
    let mut on_path = vec![false; n];
    let mut path = Vec::with_capacity(k);
    for root in 0..n {
        path.push(root);
        on_path[root] = true;
        if !extend(g, k, root, &mut path, &mut on_path, visit) {
            return Ok(());
        }
        on_path[root] = false;
        path.pop();
    }
    Ok(())
}

fn extend(
    g: &Graph,
    k: usize,
    root: usize,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    visit: &mut impl FnMut(&[usize]) -> bool,
) -> bool {
    if path.len() == k {
        // Close the cycle; count one orientation only.
        if g.has_edge(*path.last().unwrap(), root) && path[1] < path[k - 1] {
            return visit(path);
        }
        return true;
    }
    let last = *path.last().unwrap();
    for &next in g.neighbors(last) {
        // Vertices below the root belong to cycles already rooted there.
        if next <= root || on_path[next] {
            continue;
        }
        path.push(next);
        on_path[next] = true;
        let keep_going = extend(g, k, root, path, on_path, visit);
        on_path[next] = false;
        path.pop();
        if !keep_going {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hexagon_has_one_six_cycle_and_no_four_cycle() {
        let g = Graph::cycle(6);
        assert_eq!(count_k_cycles(&g, 6).unwrap(), 1);
        assert_eq!(count_k_cycles(&g, 4).unwrap(), 0);
    }

    #[test]
    fn triangle_counts_once() {
        let g = Graph::complete(3);
        assert_eq!(count_k_cycles(&g, 3).unwrap(), 1);
    }

    #[test]
    fn empty_graph_has_no_cycles() {
        let g = Graph::new(8, &[]).unwrap();
        for k in 3..=8 {
            assert_eq!(count_k_cycles(&g, k).unwrap(), 0);
        }
    }

    #[test]
    fn out_of_range_k_is_an_argument_error() {
        let g = Graph::complete(4);
        assert!(count_k_cycles(&g, 2).is_err());
        assert!(count_k_cycles(&g, 5).is_err());
    }

    #[test]
    fn k4_cycle_census() {
        // K4: four triangles and three 4-cycles.
        let g = Graph::complete(4);
        assert_eq!(count_k_cycles(&g, 3).unwrap(), 4);
        assert_eq!(count_k_cycles(&g, 4).unwrap(), 3);
    }

    #[test]
    fn find_returns_a_real_cycle() {
        let g = Graph::cycle(5);
        let cycle = find_k_cycle(&g, 5).unwrap().unwrap();
        assert_eq!(cycle.len(), 5);
        for w in 0..5 {
            assert!(g.has_edge(cycle[w], cycle[(w + 1) % 5]));
        }
        assert!(has_k_cycle(&g, 5).unwrap());
        assert!(!has_k_cycle(&g, 4).unwrap());
    }

    #[test]
    fn count_is_invariant_under_relabeling() {
        use crate::graph::Permutation;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..40 {
            let n = rng.random_range(4..10);
            let g = Graph::random_er(n, 0.35, &mut rng);
            let p = Permutation::random(n, &mut rng);
            let h = p.apply_graph(&g).unwrap();
            for k in 3..=n.min(6) {
                assert_eq!(
                    count_k_cycles(&g, k).unwrap(),
                    count_k_cycles(&h, k).unwrap()
                );
            }
        }
    }
}
