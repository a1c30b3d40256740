//! Shared fixtures for the layer benchmarks.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smp_core::graph::Graph;
use smp_core::layers::{LocalContext, MpnnLayerParams, SmpLayerParams};
use smp_core::tensor::DiffTensor;

pub struct Fixture {
    pub graph: Graph,
    pub context: LocalContext,
    pub features: DiffTensor,
    pub fast: SmpLayerParams,
    pub default: SmpLayerParams,
    pub mpnn: MpnnLayerParams,
}

/// A graph with ~`n * degree / 2` edges plus random inputs and one layer's
/// worth of parameters per variant, all at width `c`.
pub fn fixture(n: usize, degree: usize, c: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = (n * degree / 2).min(n * (n - 1) / 2);
    let mut edges = Vec::with_capacity(target);
    while edges.len() < target {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b {
            continue;
        }
        let e = (a.min(b), a.max(b));
        if !edges.contains(&e) {
            edges.push(e);
        }
    }
    let graph = Graph::new(n, &edges).expect("valid edges");
    let context = LocalContext {
        tensor: DiffTensor::leaf(
            vec![n, n, c],
            (0..n * n * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .expect("context shape"),
        row_of: Rc::new((0..n).collect()),
    };
    let features = DiffTensor::leaf(
        vec![n, c],
        (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("feature shape");
    Fixture {
        graph,
        context,
        features,
        fast: SmpLayerParams::init_fast("bench", c, c, &mut rng),
        default: SmpLayerParams::init_default("bench", c, c, 0, &mut rng),
        mpnn: MpnnLayerParams::init("bench", c, c, 0, &mut rng),
    }
}
