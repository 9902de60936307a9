// SPDX-License-Identifier: Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meshtrace_core::losses::{chamfer, mesh_loss_against, LossWeights};
use meshtrace_core::mesh::{
    marching_cubes, mean_shape, primitives, sample_points, simplify, voxelize, MeanShapeConfig, Mesh, Vec3,
};
use meshtrace_core::metrics::f1_at;

fn sphere() -> Mesh {
    primitives::uv_sphere(0.5, 24, 32)
}

fn sampling(c: &mut Criterion) {
    let m = sphere();
    let mut g = c.benchmark_group("sample_points");
    for n in [1000, 5000, 10_000] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| b.iter(|| sample_points(black_box(&m), n, 0)));
    }
    g.finish();
}

fn losses(c: &mut Criterion) {
    let gt = sphere();
    let pred = primitives::cube(6);
    let p = sample_points(&pred, 5000, 1).unwrap();
    let q = sample_points(&gt, 5000, 2).unwrap();
    c.bench_function("chamfer 5000x5000", |b| b.iter(|| chamfer(black_box(&p), black_box(&q))));
    let w = LossWeights::default();
    c.bench_function("mesh loss with gradient", |b| b.iter(|| mesh_loss_against(black_box(&pred), &q, 5000, &w, 3)));
    let near = gt.translated(&Vec3::new(0.05, 0.0, 0.0));
    c.bench_function("F1@0.3 10k samples", |b| b.iter(|| f1_at(black_box(&near), &gt, 0.3, 10_000, 4)));
}

fn volumes(c: &mut Criterion) {
    let m = sphere();
    c.bench_function("voxelize 32", |b| b.iter(|| voxelize(black_box(&m), 32)));
    let (grid, _) = voxelize(&m, 32).unwrap();
    c.bench_function("marching cubes 32", |b| b.iter(|| marching_cubes(black_box(&grid), 0.5)));
    let surface = marching_cubes(&grid, 0.5);
    c.bench_function("simplify to 1000 faces", |b| b.iter(|| simplify(black_box(&surface), 1000)));
    let copies: Vec<Mesh> = (0..10).map(|k| m.scaled(1.0 + 0.01 * k as f64)).collect();
    let mut g = c.benchmark_group("mean shape of 10");
    g.sample_size(10);
    g.bench_function("32^3", |b| b.iter(|| mean_shape(black_box(&copies), &MeanShapeConfig::default())));
    g.finish();
}

criterion_group!(benches, sampling, losses, volumes);
criterion_main!(benches);
