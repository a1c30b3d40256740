//! Property-based invariants over random graphs, permutations and data.

use proptest::prelude::*;
use std::collections::BTreeSet;

use smp_core::datasets::{read_dataset, write_dataset, Dataset, GenConfig, Label, Record, TaskKind};
use smp_core::graph::{all_pairs_shortest_paths, count_k_cycles, trace_power, Graph, Permutation};

fn arb_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n)
        .prop_flat_map(|n| {
            let pairs = n * (n - 1) / 2;
            (Just(n), proptest::bits::u64::masked((1u64 << pairs) - 1))
        })
        .prop_map(|(n, mask)| {
            let mut edges = Vec::new();
            let mut bit = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if mask >> bit & 1 == 1 {
                        edges.push((i, j));
                    }
                    bit += 1;
                }
            }
            Graph::new(n, &edges).expect("valid edges")
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// pi2.(pi1.obj) == (pi2 o pi1).obj for matrices, row matrices, 3-tensors
    /// and graphs.
    #[test]
    fn permutations_compose_on_every_object_kind(
        g in arb_graph(8),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let n = g.n();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p1 = Permutation::random(n, &mut rng);
        let p2 = Permutation::random(n, &mut rng);
        let composed = p2.compose(&p1);

        let matrix: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        prop_assert_eq!(
            p2.apply_matrix(&p1.apply_matrix(&matrix, n).unwrap(), n).unwrap(),
            composed.apply_matrix(&matrix, n).unwrap()
        );

        let c = 3;
        let rows: Vec<f64> = (0..n * c).map(|_| rng.random::<f64>()).collect();
        prop_assert_eq!(
            p2.apply_flat_rows(&p1.apply_flat_rows(&rows, n, c).unwrap(), n, c).unwrap(),
            composed.apply_flat_rows(&rows, n, c).unwrap()
        );

        let tensor: Vec<f64> = (0..n * n * c).map(|_| rng.random::<f64>()).collect();
        prop_assert_eq!(
            p2.apply_tensor3(&p1.apply_tensor3(&tensor, n, c).unwrap(), n, c).unwrap(),
            composed.apply_tensor3(&tensor, n, c).unwrap()
        );

        prop_assert_eq!(
            p2.apply_graph(&p1.apply_graph(&g).unwrap()).unwrap(),
            composed.apply_graph(&g).unwrap()
        );
    }

    #[test]
    fn cycle_counts_are_permutation_invariant(
        g in arb_graph(8),
        perm_seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
        let p = Permutation::random(g.n(), &mut rng);
        let h = p.apply_graph(&g).unwrap();
        for k in 3..=g.n().min(6) {
            prop_assert_eq!(count_k_cycles(&g, k).unwrap(), count_k_cycles(&h, k).unwrap());
        }
    }

    #[test]
    fn trace_cubed_is_six_times_triangles(g in arb_graph(8)) {
        if g.n() >= 3 {
            prop_assert_eq!(trace_power(&g, 3), 6 * count_k_cycles(&g, 3).unwrap() as i64);
        } else {
            prop_assert_eq!(trace_power(&g, 3), 0);
        }
    }

    #[test]
    fn apsp_is_symmetric_with_zero_diagonal(g in arb_graph(10)) {
        let n = g.n();
        let d = all_pairs_shortest_paths(&g);
        for i in 0..n {
            prop_assert_eq!(d[i][i], 0);
            for j in 0..n {
                prop_assert_eq!(d[i][j], d[j][i]);
                // Triangle inequality, sentinel-aware.
                for k in 0..n {
                    if d[i][k] < n && d[k][j] < n {
                        prop_assert!(d[i][j] <= d[i][k] + d[k][j]);
                    }
                }
            }
        }
    }

    /// Round trip through the JSON-lines format is the identity on
    /// arbitrary graphs with features.
    #[test]
    fn dataset_roundtrip_is_identity(
        g in arb_graph(9),
        label in any::<bool>(),
        feature_values in proptest::collection::vec(-1e3f64..1e3, 0..40),
    ) {
        let n = g.n();
        let g = if feature_values.len() >= n {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![feature_values[i]]).collect();
            g.with_node_features(rows).unwrap()
        } else {
            g
        };
        let dataset = Dataset {
            task: TaskKind::Cycles { k: 4 },
            records: vec![Record { graph: g, label: Label::Cycle(label) }],
            seed: 7,
            config: GenConfig::Cycles { k: 4, n, count: 1 },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.jsonl");
        write_dataset(&dataset, &path).unwrap();
        prop_assert_eq!(read_dataset(&path).unwrap(), dataset);
    }

    /// The canonical cycle enumeration agrees with a brute-force census
    /// that hashes every rotation/reflection class of closed walks.
    #[test]
    fn cycle_count_matches_bruteforce_census(g in arb_graph(7)) {
        for k in 3..=g.n() {
            let fast = count_k_cycles(&g, k).unwrap();
            let brute = bruteforce_cycles(&g, k);
            prop_assert_eq!(fast, brute, "k = {}", k);
        }
    }
}

/// Exhaustive reference census: enumerate all k-tuples of distinct vertices
/// forming a closed path and keep the lexicographically least
/// rotation/reflection of each.
fn bruteforce_cycles(g: &Graph, k: usize) -> u64 {
    let n = g.n();
    let mut canon: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut tuple = Vec::with_capacity(k);
    fn extend(
        g: &Graph,
        k: usize,
        tuple: &mut Vec<usize>,
        canon: &mut BTreeSet<Vec<usize>>,
        n: usize,
    ) {
        if tuple.len() == k {
            if g.has_edge(tuple[k - 1], tuple[0]) {
                let mut best: Option<Vec<usize>> = None;
                for shift in 0..k {
                    for reflect in [false, true] {
                        let seq: Vec<usize> = (0..k)
                            .map(|i| {
                                let idx = if reflect { (shift + k - i) % k } else { (shift + i) % k };
                                tuple[idx]
                            })
                            .collect();
                        if best.as_ref().is_none_or(|b| seq < *b) {
                            best = Some(seq);
                        }
                    }
                }
                canon.insert(best.expect("nonempty"));
            }
            return;
        }
        let last = tuple.last().copied();
        for v in 0..n {
            if tuple.contains(&v) {
                continue;
            }
            if let Some(prev) = last {
                if !g.has_edge(prev, v) {
                    continue;
                }
            }
            tuple.push(v);
            extend(g, k, tuple, canon, n);
            tuple.pop();
        }
    }
    extend(g, k, &mut tuple, &mut canon, n);
    canon.len() as u64
}
