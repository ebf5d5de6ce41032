//! Sequential versus data-parallel execution of the heavy kernels.
//!
//! Each kernel runs once inside a single-thread pool and once on the
//! default pool. Built without the `parallel` feature both variants run
//! sequentially, which gives the fallback's baseline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use imutube_core::egomotion::{backproject, colored_icp, estimate_normals, IcpConfig};
use imutube_core::harlab::{forest_train, ForestConfig};
use imutube_core::par;
use imutube_core::pipeline::generator::clip_specs;
use imutube_core::pipeline::{CameraMotion, GeneratorConfig, Scenario};

const VARIANTS: [(&str, usize); 2] = [("sequential", 1), ("parallel", 0)];

fn rendered_pair() -> (
    imutube_core::egomotion::ColoredPointCloud,
    imutube_core::egomotion::ColoredPointCloud,
) {
    let gen = GeneratorConfig {
        scenarios: vec![Scenario::Still],
        camera: CameraMotion::Pan,
        ..GeneratorConfig::default()
    };
    let scene = clip_specs(&gen)[0].scene;
    let cloud = |t: f64| {
        let (d, c) = scene.render(t);
        backproject(&d, &c, &scene.intrinsics, 2, None).unwrap()
    };
    (cloud(0.0), cloud(1.0 / 30.0))
}

fn normals(c: &mut Criterion) {
    let (cloud, _) = rendered_pair();
    let mut g = c.benchmark_group("estimate_normals");
    for (name, workers) in VARIANTS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || estimate_normals(&cloud, 30).unwrap()))
        });
    }
    g.finish();
}

fn icp(c: &mut Criterion) {
    let (target, source) = rendered_pair();
    let target = estimate_normals(&target, 30).unwrap();
    let cfg = IcpConfig::default();
    let mut g = c.benchmark_group("colored_icp");
    g.sample_size(10);
    for (name, workers) in VARIANTS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || colored_icp(&source, &target, &cfg).unwrap()))
        });
    }
    g.finish();
}

fn forest(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels: Vec<usize> = (0..600).map(|i| i % 3).collect();
    let features: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            (0..64)
                .map(|k| l as f64 * (k % 4) as f64 * 0.3 + rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let cfg = ForestConfig {
        n_trees: 50,
        min_leaf: 1,
        seed: 0,
    };
    let mut g = c.benchmark_group("forest_train");
    g.sample_size(10);
    for (name, workers) in VARIANTS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_workers(workers, || forest_train(&features, &labels, &cfg).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, normals, icp, forest);
criterion_main!(benches);
