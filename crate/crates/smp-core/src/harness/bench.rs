//! Per-layer forward-pass timings across graph sizes and densities.

use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::graph::Graph;
use crate::layers::{
    mpnn_layer, smp_default_layer, smp_fast_layer, LocalContext, MpnnLayerParams, SmpLayerParams,
};
use crate::tensor::DiffTensor;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub variant: String,
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub median_us: f64,
}

const VARIANTS: [&str; 3] = ["mpnn", "smp-fast", "smp-default"];

/// Builds a random graph with exactly `n * degree / 2` distinct edges.
fn fixed_degree_graph(n: usize, degree: usize, rng: &mut ChaCha8Rng) -> Graph {
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
    Graph::new(n, &edges).expect("valid edges")
}

fn median(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    }
}

/// Times one forward pass of each layer variant at width `c` on graphs of
/// the given sizes and average degrees. Per (variant, n, degree): `reps`
/// runs, median wall-clock in microseconds.
pub fn bench_layers(
    sizes: &[usize],
    degrees: &[usize],
    c: usize,
    reps: usize,
    seed: u64,
) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &degree in degrees {
        for &n in sizes {
            let g = fixed_degree_graph(n, degree, &mut rng);
            let context_values: Vec<f64> =
                (0..n * n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let context = LocalContext {
                tensor: DiffTensor::leaf(vec![n, n, c], context_values).expect("context"),
                row_of: Rc::new((0..n).collect()),
            };
            let features = DiffTensor::leaf(
                vec![n, c],
                (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .expect("features");
            let fast = SmpLayerParams::init_fast("b", c, c, &mut rng);
            let default = SmpLayerParams::init_default("b", c, c, 0, &mut rng);
            let mpnn = MpnnLayerParams::init("b", c, c, 0, &mut rng);

            for variant in VARIANTS {
                let mut samples = Vec::with_capacity(reps);
                for _ in 0..reps {
                    let start = Instant::now();
                    match variant {
                        "mpnn" => {
                            let out = mpnn_layer(&features, &g, &mpnn).expect("forward");
                            std::hint::black_box(out.values()[0]);
                        }
                        "smp-fast" => {
                            let out = smp_fast_layer(&context, &g, &fast).expect("forward");
                            std::hint::black_box(out.tensor.values()[0]);
                        }
                        _ => {
                            let out = smp_default_layer(&context, &g, &default).expect("forward");
                            std::hint::black_box(out.tensor.values()[0]);
                        }
                    }
                    samples.push(start.elapsed().as_secs_f64() * 1e6);
                }
                rows.push(BenchRow {
                    variant: variant.to_string(),
                    n,
                    m: g.edge_count(),
                    c,
                    median_us: median(samples),
                });
            }
        }
    }
    rows
}

/// Least-squares slope of `log(median)` against `log(n)` for one variant,
/// i.e. the fitted scaling exponent over the measured sizes.
pub fn fitted_exponent(rows: &[BenchRow], variant: &str) -> f64 {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| ((r.n as f64).ln(), r.median_us.max(1e-3).ln()))
        .collect();
    let n = points.len() as f64;
    let (sx, sy): (f64, f64) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<(), HarnessError> {
    use std::io::Write as _;
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "variant,n,m,c,median_us")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.variant, r.n, r.m, r.c, r.median_us)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_cover_every_variant_and_size() {
        let rows = bench_layers(&[8, 12], &[4], 4, 3, 0);
        assert_eq!(rows.len(), 6);
        for variant in VARIANTS {
            assert!(rows.iter().any(|r| r.variant == variant));
        }
    }

    #[test]
    fn exponent_of_quadratic_data_is_two() {
        let rows: Vec<BenchRow> = [16usize, 32, 64]
            .iter()
            .map(|&n| BenchRow {
                variant: "smp-fast".into(),
                n,
                m: 2 * n,
                c: 16,
                median_us: (n * n) as f64,
            })
            .collect();
        let slope = fitted_exponent(&rows, "smp-fast");
        assert!((slope - 2.0).abs() < 1e-9);
    }
}
