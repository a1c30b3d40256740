//! Forward-pass timings of the three layer kinds across graph sizes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use smp_bench::fixture;
use smp_core::layers::{mpnn_layer, smp_default_layer, smp_fast_layer};

fn layer_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("layer-forward");
    for &n in &[16usize, 32, 64] {
        let fx = fixture(n, 4, 16, 0xbe9c);
        group.bench_with_input(BenchmarkId::new("mpnn", n), &fx, |b, fx| {
            b.iter(|| black_box(mpnn_layer(&fx.features, &fx.graph, &fx.mpnn).unwrap()));
        });
        group.bench_with_input(BenchmarkId::new("smp-fast", n), &fx, |b, fx| {
            b.iter(|| black_box(smp_fast_layer(&fx.context, &fx.graph, &fx.fast).unwrap()));
        });
        group.bench_with_input(BenchmarkId::new("smp-default", n), &fx, |b, fx| {
            b.iter(|| black_box(smp_default_layer(&fx.context, &fx.graph, &fx.default).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, layer_forward);
criterion_main!(benches);
