//! Executable invariants: equivariance, oracle cross-checks, expressiveness
//! separation and gradient validation, all with fixed seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

use crate::coloring::{color_nodes, init_colored_context};
use crate::graph::{
    all_pairs_shortest_paths, count_k_cycles, receptive_field, receptive_field_recursion,
    spectral_radius_dense, spectral_radius_power, trace_power, Graph, Permutation,
};
use crate::layers::{
    equivariant_linear_stack, graph_extract, init_local_context, lift_mpnn_to_smp, mpnn_layer,
    node_pool, smp_default_layer, smp_fast_layer, smp_fast_layer_per_edge, sum_propagation_power,
    EquivLinearParams, LocalContext, MpnnLayerParams, NodePoolParams, SmpLayerParams,
};
use crate::tensor::{finite_difference_check, DiffTensor, MlpParams, Result as TensorResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Equivariance,
    Oracles,
    Separation,
    Gradients,
    All,
}

impl Suite {
    pub fn parse(name: &str) -> Option<Suite> {
        match name {
            "equivariance" => Some(Suite::Equivariance),
            "oracles" => Some(Suite::Oracles),
            "separation" => Some(Suite::Separation),
            "gradients" => Some(Suite::Gradients),
            "all" => Some(Suite::All),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &'static str, worst: f64, tolerance: f64) -> Self {
        CheckResult {
            name,
            passed: worst <= tolerance,
            detail: format!("worst {worst:.3e}, tolerance {tolerance:.0e}"),
        }
    }

    fn flag(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult {
            name,
            passed,
            detail,
        }
    }
}

/// Runs one suite (or all of them) and returns per-check results.
pub fn run_suite(suite: Suite) -> Vec<CheckResult> {
    match suite {
        Suite::Equivariance => equivariance_checks(),
        Suite::Oracles => oracle_checks(),
        Suite::Separation => separation_checks(),
        Suite::Gradients => gradient_checks(),
        Suite::All => {
            let mut all = equivariance_checks();
            all.extend(oracle_checks());
            all.extend(separation_checks());
            all.extend(gradient_checks());
            all
        }
    }
}

pub const EQUIVARIANCE_TOL: f64 = 1e-9;
pub const EQUIVARIANCE_TRIALS: usize = 200;

// ── equivariance ────────────────────────────────────────────────────

fn random_graph(rng: &mut ChaCha8Rng, n_lo: usize, n_hi: usize) -> Graph {
    let n = rng.random_range(n_lo..=n_hi);
    let p = rng.random_range(0.2..0.6);
    Graph::random_er(n, p, rng)
}

fn random_context(rng: &mut ChaCha8Rng, n: usize, c: usize) -> LocalContext {
    let values: Vec<f64> = (0..n * n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    LocalContext {
        tensor: DiffTensor::leaf(vec![n, n, c], values).expect("context shape"),
        row_of: Rc::new((0..n).collect()),
    }
}

fn permute_context(perm: &Permutation, u: &LocalContext) -> LocalContext {
    let n = u.n();
    let c = u.channels();
    let values = perm
        .apply_tensor3(u.tensor.values(), n, c)
        .expect("matching sizes");
    LocalContext {
        tensor: DiffTensor::leaf(vec![n, n, c], values).expect("context shape"),
        row_of: u.row_of.clone(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Worst-case `max |pi.f(U, A) - f(pi.U, pi.A)|` over random triples.
pub fn layer_commutation_error<F>(seed: u64, trials: usize, mut layer: F) -> f64
where
    F: FnMut(&LocalContext, &Graph, &mut ChaCha8Rng) -> LocalContext,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let g = random_graph(&mut rng, 4, 12);
        let n = g.n();
        let c = rng.random_range(1..5);
        let u = random_context(&mut rng, n, c);
        let perm = Permutation::random(n, &mut rng);

        let mut param_rng = rng.clone();
        let out = layer(&u, &g, &mut param_rng);
        let mut param_rng = rng.clone();
        let out_permuted = layer(
            &permute_context(&perm, &u),
            &perm.apply_graph(&g).expect("valid permutation"),
            &mut param_rng,
        );
        rng = param_rng;

        let expected = perm
            .apply_tensor3(out.tensor.values(), n, out.channels())
            .expect("matching sizes");
        worst = worst.max(max_abs_diff(out_permuted.tensor.values(), &expected));
    }
    worst
}

fn fast_layer_equivariance() -> CheckResult {
    let worst = layer_commutation_error(101, EQUIVARIANCE_TRIALS, |u, g, rng| {
        let p = SmpLayerParams::init_fast("l", u.channels(), 4, rng);
        smp_fast_layer(u, g, &p).expect("forward")
    });
    CheckResult::bound("equivariance/fast-layer", worst, EQUIVARIANCE_TOL)
}

fn default_layer_equivariance() -> CheckResult {
    // Alternates between plain graphs and graphs carrying 2-channel edge
    // features; the features relabel together with the graph.
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for trial in 0..EQUIVARIANCE_TRIALS {
        let mut g = random_graph(&mut rng, 4, 12);
        let mut c_y = 0;
        if trial % 2 == 0 && g.edge_count() > 0 {
            let features = g
                .edges()
                .iter()
                .map(|&e| {
                    (
                        e,
                        vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    )
                })
                .collect();
            g = g.with_edge_features(features).expect("valid edges");
            c_y = 2;
        }
        let n = g.n();
        let c = rng.random_range(1..5);
        let u = random_context(&mut rng, n, c);
        let p = SmpLayerParams::init_default("l", c, 4, c_y, &mut rng);
        let perm = Permutation::random(n, &mut rng);

        let out = smp_default_layer(&u, &g, &p).expect("forward");
        let out_permuted = smp_default_layer(
            &permute_context(&perm, &u),
            &perm.apply_graph(&g).expect("valid"),
            &p,
        )
        .expect("forward");
        let expected = perm
            .apply_tensor3(out.tensor.values(), n, out.channels())
            .expect("matching sizes");
        worst = worst.max(max_abs_diff(out_permuted.tensor.values(), &expected));
    }
    CheckResult::bound("equivariance/default-layer", worst, EQUIVARIANCE_TOL)
}

fn mpnn_layer_equivariance() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst = 0.0f64;
    for _ in 0..EQUIVARIANCE_TRIALS {
        let g = random_graph(&mut rng, 4, 12);
        let n = g.n();
        let c = rng.random_range(1..5);
        let x = DiffTensor::leaf(
            vec![n, c],
            (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .expect("feature shape");
        let p = MpnnLayerParams::init("l", c, 4, 0, &mut rng);
        let perm = Permutation::random(n, &mut rng);

        let out = mpnn_layer(&x, &g, &p).expect("forward");
        let x_permuted = DiffTensor::leaf(
            vec![n, c],
            perm.apply_flat_rows(x.values(), n, c).expect("sizes"),
        )
        .expect("feature shape");
        let out_permuted = mpnn_layer(&x_permuted, &perm.apply_graph(&g).expect("valid"), &p)
            .expect("forward");
        let expected = perm.apply_flat_rows(out.values(), n, 4).expect("sizes");
        worst = worst.max(max_abs_diff(out_permuted.values(), &expected));
    }
    CheckResult::bound("equivariance/mpnn-layer", worst, EQUIVARIANCE_TOL)
}

fn stacked_node_pool_equivariance() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut worst = 0.0f64;
    for _ in 0..EQUIVARIANCE_TRIALS {
        let g = random_graph(&mut rng, 4, 12);
        let n = g.n();
        let l1 = SmpLayerParams::init_fast("l0", 1, 4, &mut rng);
        let l2 = SmpLayerParams::init_fast("l1", 4, 4, &mut rng);
        let pool = NodePoolParams::init("pool", 4, 3, 2, &mut rng);
        let run = |graph: &Graph| -> Vec<f64> {
            let u = init_local_context(graph);
            let u = smp_fast_layer(&u, graph, &l1).expect("forward");
            let u = smp_fast_layer(&u, graph, &l2).expect("forward");
            node_pool(&u, &pool).expect("pool").values().to_vec()
        };
        let base = run(&g);
        let perm = Permutation::random(n, &mut rng);
        let permuted = run(&perm.apply_graph(&g).expect("valid"));
        let expected = perm.apply_flat_rows(&base, n, 2).expect("sizes");
        worst = worst.max(max_abs_diff(&permuted, &expected));
    }
    CheckResult::bound("equivariance/stacked-node-pool", worst, EQUIVARIANCE_TOL)
}

fn stacked_graph_extract_invariance() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    let mut worst = 0.0f64;
    for _ in 0..EQUIVARIANCE_TRIALS {
        let g = random_graph(&mut rng, 4, 12);
        let l1 = SmpLayerParams::init_default("l0", 1, 4, 0, &mut rng);
        let head = MlpParams::two_layer("head", 8, 4, 2, &mut rng);
        let run = |graph: &Graph| -> Vec<f64> {
            let u = init_local_context(graph);
            let u = smp_default_layer(&u, graph, &l1).expect("forward");
            graph_extract(&u, &head).expect("extract").values().to_vec()
        };
        let base = run(&g);
        let perm = Permutation::random(g.n(), &mut rng);
        let permuted = run(&perm.apply_graph(&g).expect("valid"));
        worst = worst.max(max_abs_diff(&base, &permuted));
    }
    CheckResult::bound("equivariance/stacked-graph-extract", worst, EQUIVARIANCE_TOL)
}

fn equivariance_checks() -> Vec<CheckResult> {
    vec![
        fast_layer_equivariance(),
        default_layer_equivariance(),
        mpnn_layer_equivariance(),
        stacked_node_pool_equivariance(),
        stacked_graph_extract_invariance(),
    ]
}

// ── oracles ─────────────────────────────────────────────────────────

/// All graphs on `n` labeled nodes whose BFS tree reaches every node.
fn connected_graphs(n: usize) -> Vec<Graph> {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        let g = Graph::new(n, &edges).expect("valid edges");
        if crate::graph::bfs_distances(&g, 0).iter().all(|&d| d < n) {
            out.push(g);
        }
    }
    out
}

fn recursion_matches_definition() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(211);
    let mut graphs_checked = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let g = Graph::random_er(n, rng.random_range(0.15..0.6), &mut rng);
        for l in 1..=4 {
            let rec = receptive_field_recursion(&g, l);
            for i in 0..n {
                if rec[i] != receptive_field(&g, i, l) {
                    return CheckResult::flag(
                        "oracles/receptive-field-recursion",
                        false,
                        format!("mismatch on random graph n={n}, node {i}, l={l}"),
                    );
                }
            }
        }
        graphs_checked += 1;
    }
    for n in 2..=6 {
        for g in connected_graphs(n) {
            for l in 1..=4 {
                let rec = receptive_field_recursion(&g, l);
                for i in 0..n {
                    if rec[i] != receptive_field(&g, i, l) {
                        return CheckResult::flag(
                            "oracles/receptive-field-recursion",
                            false,
                            format!("mismatch on exhaustive graph n={n}, node {i}, l={l}"),
                        );
                    }
                }
            }
            graphs_checked += 1;
        }
    }
    CheckResult::flag(
        "oracles/receptive-field-recursion",
        true,
        format!("{graphs_checked} graphs, l = 1..4, exact"),
    )
}

fn recursion_saturates_to_adjacency() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(223);
    let mut checked = 0usize;
    // Any connected graph saturates one round past the diameter. On
    // bipartite graphs the diameter itself is enough: adjacent nodes sit at
    // distances differing by exactly one, so d(i,p) + d(i,q) <= 2D - 1.
    for trial in 0..300 {
        let bipartite = trial % 2 == 0;
        let g = if bipartite {
            if trial % 4 == 0 {
                Graph::random_tree(rng.random_range(2..10), &mut rng)
            } else {
                Graph::cycle(2 * rng.random_range(2..5))
            }
        } else {
            let n = rng.random_range(3..9);
            let g = Graph::random_er(n, 0.5, &mut rng);
            if crate::graph::bfs_distances(&g, 0).iter().any(|&d| d >= n) {
                continue;
            }
            g
        };
        let n = g.n();
        let apsp = all_pairs_shortest_paths(&g);
        let diameter = apsp
            .iter()
            .flat_map(|row| row.iter())
            .copied()
            .max()
            .unwrap_or(0);
        let l = if bipartite { diameter } else { diameter + 1 };
        if l == 0 {
            continue;
        }
        let adjacency: Vec<bool> = g.adjacency_matrix().iter().map(|&v| v != 0.0).collect();
        for state in receptive_field_recursion(&g, l) {
            if state != adjacency {
                return CheckResult::flag(
                    "oracles/receptive-field-saturation",
                    false,
                    format!("n={n}, diameter {diameter}, l={l}: field is not the full adjacency"),
                );
            }
        }
        checked += 1;
    }
    CheckResult::flag(
        "oracles/receptive-field-saturation",
        true,
        format!("{checked} connected graphs saturate"),
    )
}

fn sum_propagation_matches_powers() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(227);
    for trial in 0..500 {
        let n = rng.random_range(2..=10);
        let g = Graph::random_er(n, rng.random_range(0.2..0.7), &mut rng);
        // Integer matrix power by repeated multiplication.
        let a: Vec<i64> = g.adjacency_matrix().iter().map(|&v| v as i64).collect();
        let mut power = a.clone();
        for l in 1..=4usize {
            if l > 1 {
                let mut next = vec![0i64; n * n];
                for i in 0..n {
                    for k in 0..n {
                        let v = power[i * n + k];
                        if v == 0 {
                            continue;
                        }
                        for j in 0..n {
                            next[i * n + j] += v * a[k * n + j];
                        }
                    }
                }
                power = next;
            }
            let ctx = sum_propagation_power(&g, l).expect("propagation");
            for i in 0..n {
                for j in 0..n {
                    if ctx.value(i, j, 0) != power[i * n + j] as f64 {
                        return CheckResult::flag(
                            "oracles/sum-propagation-powers",
                            false,
                            format!("trial {trial}: A^{l}[{i},{j}] mismatch"),
                        );
                    }
                }
            }
        }
    }
    CheckResult::flag(
        "oracles/sum-propagation-powers",
        true,
        "500 graphs, l = 1..4, exact integer match".into(),
    )
}

fn trace_counts_triangles() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(229);
    let mut worst_graphs = 0usize;
    for _ in 0..300 {
        let n = rng.random_range(3..=10);
        let g = Graph::random_er(n, rng.random_range(0.2..0.7), &mut rng);
        let triangles = count_k_cycles(&g, 3).expect("valid k");
        if trace_power(&g, 3) != 6 * triangles as i64 {
            return CheckResult::flag(
                "oracles/trace-triangles",
                false,
                format!("tr(A^3) != 6 * triangles on n={n}"),
            );
        }
        worst_graphs += 1;
    }
    CheckResult::flag(
        "oracles/trace-triangles",
        true,
        format!("{worst_graphs} graphs agree"),
    )
}

fn spectral_routes_agree() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(233);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(2..=12);
        let g = Graph::random_er(n, rng.random_range(0.2..0.8), &mut rng);
        let dense = spectral_radius_dense(&g);
        match spectral_radius_power(&g) {
            Some(power) => worst = worst.max((power - dense).abs()),
            None => {
                return CheckResult::flag(
                    "oracles/spectral-radius-routes",
                    false,
                    format!("power iteration failed to converge on n={n}"),
                )
            }
        }
    }
    CheckResult::bound("oracles/spectral-radius-routes", worst, 1e-8)
}

fn apsp_matches_floyd_warshall() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(239);
    for _ in 0..300 {
        let n = rng.random_range(2..=10);
        let g = Graph::random_er(n, rng.random_range(0.1..0.6), &mut rng);
        let bfs = all_pairs_shortest_paths(&g);
        // Independent route: Floyd-Warshall with the same sentinel n.
        let mut dist = vec![vec![n; n]; n];
        for i in 0..n {
            dist[i][i] = 0;
        }
        for &(i, j) in g.edges() {
            dist[i][j] = 1;
            dist[j][i] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = (dist[i][k] + dist[k][j]).min(n);
                    if via < dist[i][j] {
                        dist[i][j] = via;
                    }
                }
            }
        }
        if bfs != dist {
            return CheckResult::flag(
                "oracles/apsp-two-routes",
                false,
                format!("BFS and Floyd-Warshall disagree on n={n}"),
            );
        }
    }
    CheckResult::flag("oracles/apsp-two-routes", true, "300 graphs agree".into())
}

fn cycle_count_permutation_invariant() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(241);
    for _ in 0..200 {
        let n = rng.random_range(4..=10);
        let g = Graph::random_er(n, rng.random_range(0.2..0.6), &mut rng);
        let perm = Permutation::random(n, &mut rng);
        let h = perm.apply_graph(&g).expect("valid");
        for k in 3..=n.min(7) {
            if count_k_cycles(&g, k).expect("valid k") != count_k_cycles(&h, k).expect("valid k") {
                return CheckResult::flag(
                    "oracles/cycle-count-invariance",
                    false,
                    format!("count changed under relabeling, n={n}, k={k}"),
                );
            }
        }
    }
    CheckResult::flag(
        "oracles/cycle-count-invariance",
        true,
        "200 graphs, k = 3..7".into(),
    )
}

fn fast_layer_two_routes() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(251);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let g = random_graph(&mut rng, 4, 12);
        let c = rng.random_range(1..5);
        let u = random_context(&mut rng, g.n(), c);
        let p = SmpLayerParams::init_fast("l", c, 4, &mut rng);
        let once = smp_fast_layer(&u, &g, &p).expect("forward");
        let per_edge = smp_fast_layer_per_edge(&u, &g, &p).expect("forward");
        worst = worst.max(max_abs_diff(
            once.tensor.values(),
            per_edge.tensor.values(),
        ));
    }
    CheckResult::bound("oracles/fast-layer-two-routes", worst, 1e-12)
}

fn lifted_mpnn_matches() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(257);
    let mut worst_diag = 0.0f64;
    let mut worst_off = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(3..=8);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let g = Graph::random_er(n, rng.random_range(0.3..0.7), &mut rng)
            .with_node_features(x)
            .unwrap();
        let depth = rng.random_range(1..4);
        let mut widths = vec![2usize];
        for _ in 0..depth {
            widths.push(rng.random_range(1..4));
        }
        let mpnn: Vec<MpnnLayerParams> = (0..depth)
            .map(|l| MpnnLayerParams::init(&format!("m{l}"), widths[l], widths[l + 1], 0, &mut rng))
            .collect();

        let mut features = crate::layers::node_feature_matrix(&g);
        for p in &mpnn {
            features = mpnn_layer(&features, &g, p).expect("forward");
        }
        let mut u = init_local_context(&g);
        for p in &lift_mpnn_to_smp(&mpnn, n) {
            u = smp_default_layer(&u, &g, p).expect("forward");
        }
        let c_out = *widths.last().unwrap();
        for i in 0..n {
            for q in 0..c_out {
                worst_diag = worst_diag
                    .max((u.value(i, i, 1 + q) - features.values()[i * c_out + q]).abs());
            }
            worst_diag = worst_diag.max((u.value(i, i, 0) - 1.0).abs());
            for j in 0..n {
                if j != i {
                    for q in 0..=c_out {
                        worst_off = worst_off.max(u.value(i, j, q).abs());
                    }
                }
            }
        }
    }
    CheckResult::flag(
        "oracles/mpnn-lifting",
        worst_diag <= 1e-9 && worst_off <= 1e-12,
        format!("diag {worst_diag:.3e} (tol 1e-9), off-diag {worst_off:.3e} (tol 1e-12)"),
    )
}

fn coloring_validity() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(263);
    for trial in 0..500 {
        let n = rng.random_range(1..=30);
        let g = Graph::random_er(n, rng.random_range(0.05..0.4), &mut rng);
        let l = rng.random_range(1..=3);
        let assignment = color_nodes(&g, l);
        if let Err(e) = assignment.validate(&g) {
            return CheckResult::flag(
                "oracles/coloring-validity",
                false,
                format!("trial {trial}: {e}"),
            );
        }
    }
    CheckResult::flag(
        "oracles/coloring-validity",
        true,
        "500 graphs, L = 1..3".into(),
    )
}

fn coloring_chi_monotone() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(269);
    for _ in 0..200 {
        let n = rng.random_range(2..=30);
        let g = Graph::random_er(n, rng.random_range(0.05..0.3), &mut rng);
        let mut prev = 0;
        for l in 1..=3 {
            let chi = color_nodes(&g, l).chi;
            if chi < prev {
                return CheckResult::flag(
                    "oracles/coloring-chi-monotone",
                    false,
                    format!("chi dropped from {prev} to {chi} on n={n}, L={l}"),
                );
            }
            prev = chi;
        }
    }
    CheckResult::flag(
        "oracles/coloring-chi-monotone",
        true,
        "200 graphs, L = 1..3".into(),
    )
}

fn colored_run_matches_one_hot() -> CheckResult {
    // On graphs where every node keeps its own color (chi = n), an L-layer
    // fast-SMP run over colored contexts must equal the one-hot run up to
    // the fixed row relabeling.
    let mut rng = ChaCha8Rng::seed_from_u64(271);
    let mut worst = 0.0f64;
    let mut runs = 0usize;
    for _ in 0..200 {
        let g = random_graph(&mut rng, 4, 10);
        let l = 2;
        let assignment = color_nodes(&g, l);
        let l1 = SmpLayerParams::init_fast("l0", 1, 3, &mut rng);
        let l2 = SmpLayerParams::init_fast("l1", 3, 3, &mut rng);
        if assignment.chi != g.n() {
            continue;
        }
        let colored = init_colored_context(&g, &assignment).expect("valid assignment");
        let onehot = init_local_context(&g);
        let run = |mut u: LocalContext| -> LocalContext {
            u = smp_fast_layer(&u, &g, &l1).expect("forward");
            smp_fast_layer(&u, &g, &l2).expect("forward")
        };
        let colored_out = run(colored);
        let onehot_out = run(onehot);
        for i in 0..g.n() {
            for j in 0..g.n() {
                for ch in 0..3 {
                    worst = worst
                        .max((colored_out.value(i, j, ch) - onehot_out.value(i, j, ch)).abs());
                }
            }
        }
        runs += 1;
    }
    CheckResult::flag(
        "oracles/colored-context-degenerate",
        worst <= EQUIVARIANCE_TOL && runs > 20,
        format!("worst {worst:.3e} over {runs} chi = n graphs"),
    )
}

fn oracle_checks() -> Vec<CheckResult> {
    vec![
        recursion_matches_definition(),
        recursion_saturates_to_adjacency(),
        sum_propagation_matches_powers(),
        trace_counts_triangles(),
        spectral_routes_agree(),
        apsp_matches_floyd_warshall(),
        cycle_count_permutation_invariant(),
        fast_layer_two_routes(),
        lifted_mpnn_matches(),
        coloring_validity(),
        coloring_chi_monotone(),
        colored_run_matches_one_hot(),
    ]
}

// ── separation ──────────────────────────────────────────────────────

/// C6 and two disjoint triangles: same degrees everywhere, different
/// topology.
pub fn regular_pair() -> (Graph, Graph) {
    let c6 = Graph::cycle(6);
    let triangles = Graph::complete(3).disjoint_union(&Graph::complete(3));
    (c6, triangles)
}

fn trace_separates_regular_pair() -> CheckResult {
    let (c6, triangles) = regular_pair();
    let t_c6 = trace_power(&c6, 3);
    let t_tri = trace_power(&triangles, 3);
    // The same values through the SMP construction: three rounds of sum
    // propagation followed by the trace readout.
    let smp_trace = |g: &Graph| -> f64 {
        let ctx = sum_propagation_power(g, 3).expect("propagation");
        (0..g.n()).map(|i| ctx.value(i, i, 0)).sum()
    };
    let smp_c6 = smp_trace(&c6);
    let smp_tri = smp_trace(&triangles);
    let passed = t_c6 == 0
        && t_tri == 12
        && smp_c6 == t_c6 as f64
        && smp_tri == t_tri as f64
        && t_c6 != t_tri;
    CheckResult::flag(
        "separation/trace-distinguishes",
        passed,
        format!("tr(A^3): C6 = {t_c6}, 2xC3 = {t_tri}; SMP readouts {smp_c6} vs {smp_tri}"),
    )
}

fn mpnn_blind_to_regular_pair() -> CheckResult {
    let (c6, triangles) = regular_pair();
    let mut rng = ChaCha8Rng::seed_from_u64(281);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p1 = MpnnLayerParams::init("l0", 1, 4, 0, &mut rng);
        let p2 = MpnnLayerParams::init("l1", 4, 4, 0, &mut rng);
        let readout = |g: &Graph| -> Vec<f64> {
            let x = DiffTensor::leaf(vec![6, 1], vec![1.0; 6]).expect("uniform features");
            let h = mpnn_layer(&x, g, &p1).expect("forward");
            let h = mpnn_layer(&h, g, &p2).expect("forward");
            h.sum_leading().scale(1.0 / 6.0).values().to_vec()
        };
        worst = worst.max(max_abs_diff(&readout(&c6), &readout(&triangles)));
    }
    CheckResult::bound("separation/mpnn-cannot-distinguish", worst, 1e-12)
}

fn separation_checks() -> Vec<CheckResult> {
    vec![trace_separates_regular_pair(), mpnn_blind_to_regular_pair()]
}

// ── gradients ───────────────────────────────────────────────────────

pub const GRADIENT_TOL: f64 = 1e-4;
pub const GRADIENT_STEP: f64 = 1e-5;
const GRADIENT_TRIALS: usize = 20;

fn random_leaf(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> DiffTensor {
    let count = shape.iter().product();
    DiffTensor::leaf(
        shape,
        (0..count).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("leaf shape")
}

fn worst_gradient_error<F>(seed: u64, mut build: F) -> f64
where
    F: FnMut(
        &mut ChaCha8Rng,
    ) -> (
        Vec<DiffTensor>,
        Box<dyn Fn(&[DiffTensor]) -> TensorResult<DiffTensor>>,
    ),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..GRADIENT_TRIALS {
        let (params, f) = build(&mut rng);
        let err = finite_difference_check(|p| f(p), &params, GRADIENT_STEP)
            .expect("finite differences");
        worst = worst.max(err);
    }
    worst
}

fn core_op_gradients() -> CheckResult {
    let worst = worst_gradient_error(301, |rng| {
        let x = random_leaf(rng, vec![3, 4]);
        let w = random_leaf(rng, vec![4, 2]);
        let b = random_leaf(rng, vec![2]);
        let f = move |p: &[DiffTensor]| -> TensorResult<DiffTensor> {
            // matmul -> bias -> relu -> softplus -> elementwise square -> sum
            let h = p[0].matmul(&p[1])?.add_bias(&p[2])?;
            let h = h.relu().softplus();
            h.hadamard(&h)?.sum_all().scale(0.5).sub(&p[2].sum_all())
        };
        (vec![x, w, b], Box::new(f))
    });
    CheckResult::bound("gradients/core-ops", worst, GRADIENT_TOL)
}

fn pooling_op_gradients() -> CheckResult {
    let worst = worst_gradient_error(303, |rng| {
        let u = random_leaf(rng, vec![4, 4, 3]);
        let rows: Rc<Vec<usize>> = Rc::new(vec![0, 1, 2, 3]);
        let adj = Rc::new(vec![vec![1], vec![0, 2], vec![1, 3], vec![2]]);
        let f = move |p: &[DiffTensor]| -> TensorResult<DiffTensor> {
            let normalized = p[0].rms_normalize(1e-8);
            let mean = normalized.sum_axis1()?.scale(0.25);
            let max = normalized.max_axis1()?;
            let own = normalized.gather_rows(&rows)?;
            let agg = normalized.neighbor_sum(&adj)?.sum_axis1()?;
            let stacked = DiffTensor::concat_last(&[mean, max, own, agg])?;
            Ok(stacked.hadamard(&stacked)?.sum_all())
        };
        (vec![u], Box::new(f))
    });
    CheckResult::bound("gradients/pooling-ops", worst, GRADIENT_TOL)
}

fn equiv_block_gradients() -> CheckResult {
    let worst = worst_gradient_error(307, |rng| {
        let g = random_graph(rng, 4, 7);
        let n = g.n();
        let u = random_leaf(rng, vec![n, n, 2]);
        let w = [
            random_leaf(rng, vec![2, 3]),
            random_leaf(rng, vec![2, 3]),
            random_leaf(rng, vec![2, 3]),
            random_leaf(rng, vec![3]),
        ];
        let f = move |p: &[DiffTensor]| -> TensorResult<DiffTensor> {
            let ctx = LocalContext::new(p[0].clone(), Rc::new((0..n).collect()))?;
            let params = EquivLinearParams {
                w1: p[1].clone(),
                w2: p[2].clone(),
                w3: p[3].clone(),
                c: p[4].clone(),
            };
            let out = equivariant_linear_stack(&ctx, &params)?;
            Ok(out.tensor.hadamard(&out.tensor)?.sum_all())
        };
        (
            vec![u, w[0].clone(), w[1].clone(), w[2].clone(), w[3].clone()],
            Box::new(f),
        )
    });
    CheckResult::bound("gradients/equivariant-block", worst, GRADIENT_TOL)
}

/// Rebuilds layer parameters from a flat tensor list in visit order.
fn rebuild_layer(template: &SmpLayerParams, flat: &[DiffTensor]) -> SmpLayerParams {
    let mut rebuilt = template.clone();
    let mut it = flat.iter().cloned();
    rebuilt.visit_params_mut(&mut |slot| *slot = it.next().expect("enough params"));
    rebuilt
}

fn smp_layer_gradients(name: &'static str, fast: bool, seed: u64) -> CheckResult {
    let worst = worst_gradient_error(seed, |rng| {
        let g = random_graph(rng, 4, 7);
        let n = g.n();
        let u = random_leaf(rng, vec![n, n, 2]);
        let template = if fast {
            SmpLayerParams::init_fast("l", 2, 3, rng)
        } else {
            SmpLayerParams::init_default("l", 2, 3, 0, rng)
        };
        let mut params = vec![u];
        template.visit_params(&mut |t| params.push(t.clone()));
        let f = move |p: &[DiffTensor]| -> TensorResult<DiffTensor> {
            let ctx = LocalContext::new(p[0].clone(), Rc::new((0..n).collect()))?;
            let layer = rebuild_layer(&template, &p[1..]);
            let out = if fast {
                smp_fast_layer(&ctx, &g, &layer)?
            } else {
                smp_default_layer(&ctx, &g, &layer)?
            };
            Ok(out.tensor.hadamard(&out.tensor)?.sum_all())
        };
        (params, Box::new(f))
    });
    CheckResult::bound(name, worst, GRADIENT_TOL)
}

fn mpnn_layer_gradients() -> CheckResult {
    let worst = worst_gradient_error(313, |rng| {
        let g = random_graph(rng, 4, 7);
        let n = g.n();
        let x = random_leaf(rng, vec![n, 2]);
        let template = MpnnLayerParams::init("l", 2, 3, 0, rng);
        let mut params = vec![x];
        template.visit_params(&mut |t| params.push(t.clone()));
        let f = move |p: &[DiffTensor]| -> TensorResult<DiffTensor> {
            let mut layer = template.clone();
            let mut it = p[1..].iter().cloned();
            layer.visit_params_mut(&mut |slot| *slot = it.next().expect("enough params"));
            let out = mpnn_layer(&p[0], &g, &layer)?;
            Ok(out.hadamard(&out)?.sum_all())
        };
        (params, Box::new(f))
    });
    CheckResult::bound("gradients/mpnn-layer", worst, GRADIENT_TOL)
}

fn node_pool_gradients() -> CheckResult {
    let worst = worst_gradient_error(317, |rng| {
        let n = rng.random_range(3..7);
        let u = random_leaf(rng, vec![n, n, 3]);
        let template = NodePoolParams::init("pool", 3, 3, 2, rng);
        let mut params = vec![u];
        template.visit_params(&mut |t| params.push(t.clone()));
        let f = move |p: &[DiffTensor]| -> TensorResult<DiffTensor> {
            let ctx = LocalContext::new(p[0].clone(), Rc::new((0..n).collect()))?;
            let mut pool = template.clone();
            let mut it = p[1..].iter().cloned();
            pool.visit_params_mut(&mut |slot| *slot = it.next().expect("enough params"));
            let out = node_pool(&ctx, &pool)?;
            Ok(out.hadamard(&out)?.sum_all())
        };
        (params, Box::new(f))
    });
    CheckResult::bound("gradients/node-pool", worst, GRADIENT_TOL)
}

fn graph_extract_gradients() -> CheckResult {
    let worst = worst_gradient_error(331, |rng| {
        let n = rng.random_range(3..7);
        let u = random_leaf(rng, vec![n, n, 3]);
        let template = MlpParams::two_layer("head", 6, 4, 2, rng);
        let mut params = vec![u];
        template.visit_params(&mut |t| params.push(t.clone()));
        let f = move |p: &[DiffTensor]| -> TensorResult<DiffTensor> {
            let ctx = LocalContext::new(p[0].clone(), Rc::new((0..n).collect()))?;
            let mut head = template.clone();
            let mut it = p[1..].iter().cloned();
            head.visit_params_mut(&mut |slot| *slot = it.next().expect("enough params"));
            let out = graph_extract(&ctx, &head)?;
            Ok(out.hadamard(&out)?.sum_all())
        };
        (params, Box::new(f))
    });
    CheckResult::bound("gradients/graph-extract", worst, GRADIENT_TOL)
}

fn full_network_gradients() -> CheckResult {
    // Two fast layers, graph extraction and binary cross-entropy on a
    // 6-node graph, differentiated end to end. The logit is damped into
    // the non-saturated BCE regime: at |z| >> 1 the true gradient decays
    // like e^-|z| and central differences at h = 1e-5 cannot resolve it
    // against f64 rounding, which would measure the probe, not the code.
    let worst = worst_gradient_error(337, |rng| {
        let g = Graph::random_er(6, 0.5, rng);
        let l1 = SmpLayerParams::init_fast("l0", 1, 3, rng);
        let l2 = SmpLayerParams::init_fast("l1", 3, 3, rng);
        let head = MlpParams::two_layer("head", 6, 3, 1, rng);
        let label = f64::from(rng.random::<bool>());
        let mut params = Vec::new();
        l1.visit_params(&mut |t| params.push(t.clone()));
        l2.visit_params(&mut |t| params.push(t.clone()));
        head.visit_params(&mut |t| params.push(t.clone()));
        let split1 = 6; // equiv (4) + w4 + w5
        let split2 = 12;
        let f = move |p: &[DiffTensor]| -> TensorResult<DiffTensor> {
            let layer1 = rebuild_layer(&l1, &p[..split1]);
            let layer2 = rebuild_layer(&l2, &p[split1..split2]);
            let mut head_params = head.clone();
            let mut it = p[split2..].iter().cloned();
            head_params.visit_params_mut(&mut |slot| *slot = it.next().expect("enough params"));
            let u = init_local_context(&g);
            let u = smp_fast_layer(&u, &g, &layer1)?;
            let u = smp_fast_layer(&u, &g, &layer2)?;
            let logit = graph_extract(&u, &head_params)?.scale(0.05);
            Ok(logit.softplus().sub(&logit.scale(label))?.sum_all())
        };
        (params, Box::new(f))
    });
    CheckResult::bound("gradients/full-network-bce", worst, GRADIENT_TOL)
}

fn gradient_checks() -> Vec<CheckResult> {
    vec![
        core_op_gradients(),
        pooling_op_gradients(),
        equiv_block_gradients(),
        smp_layer_gradients("gradients/fast-layer", true, 311),
        smp_layer_gradients("gradients/default-layer", false, 312),
        mpnn_layer_gradients(),
        node_pool_gradients(),
        graph_extract_gradients(),
        full_network_gradients(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for result in run_suite(Suite::All) {
            assert!(result.passed, "{}: {}", result.name, result.detail);
        }
    }

    #[test]
    fn corrupted_layer_fails_the_equivariance_check() {
        // Negative control: a layer that leaks absolute row indices must be
        // caught by the commutation test.
        let worst = layer_commutation_error(991, 20, |u, g, rng| {
            let p = SmpLayerParams::init_fast("l", u.channels(), 4, rng);
            let out = smp_fast_layer(u, g, &p).expect("forward");
            let mut values = out.tensor.values().to_vec();
            let c = out.channels();
            for (idx, v) in values.iter_mut().enumerate() {
                let row = (idx / c) % out.rows();
                *v += row as f64 * 1e-3;
            }
            LocalContext {
                tensor: DiffTensor::leaf(out.tensor.shape().to_vec(), values).unwrap(),
                row_of: out.row_of.clone(),
            }
        });
        assert!(worst > EQUIVARIANCE_TOL, "corruption went undetected");
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!(Suite::parse("equivariance"), Some(Suite::Equivariance));
        assert_eq!(Suite::parse("all"), Some(Suite::All));
        assert_eq!(Suite::parse("nope"), None);
    }
}
