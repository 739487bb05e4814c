use std::hint::black_box;

use calibra_bench::{matrix, torus};
use calibra_core::energy::singular_spectrum;
use calibra_core::exterior::compound_matrix;
use calibra_core::models::{build_model, prop53_sides, prop53_sweep};
use calibra_core::torus::{energy_quadrature, minimize_energy};
use calibra_core::{LinearMapData, ModelTag};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pullback(c: &mut Criterion) {
    let mut group = c.benchmark_group("pullback");
    for tag in [ModelTag::Kahler(3), ModelTag::G2, ModelTag::Spin7] {
        let model = build_model(tag).unwrap();
        let a = matrix(model.dim(), model.dim(), 1);
        group.bench_with_input(BenchmarkId::from_parameter(tag), &a, |b, a| {
            b.iter(|| model.form().pullback(black_box(a)).unwrap())
        });
    }
    group.finish();
}

fn compound(c: &mut Criterion) {
    let a = matrix(8, 8, 2);
    c.bench_function("compound 8x8 k=4", |b| {
        b.iter(|| compound_matrix(black_box(&a), 4).unwrap())
    });
    c.bench_function("spectrum 8x8", |b| {
        b.iter(|| singular_spectrum(&LinearMapData::euclidean(black_box(a.clone()))).unwrap())
    });
}

fn prop53(c: &mut Criterion) {
    let model = build_model(ModelTag::Spin7).unwrap();
    let a = matrix(8, 8, 3);
    c.bench_function("prop53 sides spin7", |b| {
        b.iter(|| prop53_sides(&model, black_box(&a)).unwrap())
    });
    let g2 = build_model(ModelTag::G2).unwrap();
    let mut group = c.benchmark_group("prop53 sweep");
    group.sample_size(10);
    group.bench_function("g2 x 4096", |b| {
        b.iter(|| prop53_sweep(&g2, 4096, 1e-9, black_box(5)).unwrap())
    });
    group.finish();
}

fn torus_energy(c: &mut Criterion) {
    let mut group = c.benchmark_group("torus");
    for grid in [32usize, 64, 128] {
        let spec = torus(grid).unwrap();
        group.bench_with_input(BenchmarkId::new("energy p=2", grid), &spec, |b, s| {
            b.iter(|| energy_quadrature(black_box(s), 2.0, 2.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("energy p=1", grid), &spec, |b, s| {
            b.iter(|| energy_quadrature(black_box(s), 1.0, 1.0).unwrap())
        });
    }
    group.sample_size(10);
    let spec = torus(32).unwrap();
    group.bench_function("descent 32^2", |b| {
        b.iter(|| minimize_energy(black_box(&spec), 2.0, 2.0, 1e-6, 100_000).unwrap())
    });
    group.finish();
}

criterion_group!(benches, pullback, compound, prop53, torus_energy);
criterion_main!(benches);
