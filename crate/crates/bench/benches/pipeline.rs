use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mixsched::scheduler::{scheduled_update, UpdateConfig};
use mixsched::toysim::{loss_and_grad, sgd_step, ToyModel};
use mixsched::{
    build_impact_matrix, kmeans, make_projection, project, repartition, topk_sparsify, ImpactMetric,
    SamplingState,
};
use mixsched_bench as fx;

fn sketch(c: &mut Criterion) {
    let mut group = c.benchmark_group("sketch");
    for &(h, s) in &[(4096usize, 256usize), (16384, 1024)] {
        let g = fx::uniform_vec(&mut fx::rng(1), h);
        let r = make_projection(h, s, 7).unwrap();
        group.throughput(Throughput::Elements(h as u64));
        group.bench_with_input(BenchmarkId::new("topk", h), &g, |b, g| {
            b.iter(|| topk_sparsify(black_box(g), 0.1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("project", format!("{h}x{s}")), &g, |b, g| {
            b.iter(|| project(&r, black_box(g)).unwrap())
        });
    }
    group.finish();
}

fn cluster(c: &mut Criterion) {
    let mut group = c.benchmark_group("cluster");
    group.sample_size(20);
    for &(n, k) in &[(1000usize, 8usize), (4000, 32)] {
        let pts = fx::points(n, 64, 3);
        group.bench_with_input(BenchmarkId::new("kmeans", format!("n{n}_k{k}")), &pts, |b, pts| {
            b.iter(|| kmeans(black_box(pts), k, 0, 50).unwrap())
        });
    }
    let trace = fx::trace(2000, 2048, 4);
    let proj = make_projection(2048, 128, 5).unwrap();
    group.bench_function("repartition_2000x2048", |b| {
        b.iter(|| repartition(black_box(&trace), 0.1, &proj, 16, 0).unwrap())
    });
    group.finish();
}

fn impact(c: &mut Criterion) {
    let (domains, tasks, fims) = fx::impact_inputs(72, 8, 4096, 6);
    c.bench_function("impact/matrix_72x8_d4096", |b| {
        b.iter(|| build_impact_matrix(black_box(&domains), &tasks, &fims, ImpactMetric::FimKl).unwrap())
    });
}

fn update(c: &mut Criterion) {
    let (domains, tasks, fims) = fx::impact_inputs(72, 8, 64, 8);
    let matrix = build_impact_matrix(&domains, &tasks, &fims, ImpactMetric::FimKl).unwrap();
    let histories = fx::histories(8, 40, 100);
    let state = SamplingState::new(72, 0.1, 4000, 1e-4 / 72.0).unwrap();
    let cfg = UpdateConfig::default();
    c.bench_function("scheduler/update_k72_m8", |b| {
        b.iter(|| scheduled_update(black_box(&state), &matrix, &histories, &cfg).unwrap())
    });
}

fn toy_step(c: &mut Criterion) {
    let model = ToyModel::init(32, 16, 4, &mut fx::rng(9)).unwrap();
    let batch = fx::batch(32, 32, 4, 10);
    c.bench_function("toysim/sgd_step_batch32", |b| {
        b.iter(|| {
            let (_, g) = loss_and_grad(black_box(&model), &batch).unwrap();
            sgd_step(&model, &g, 0.1).unwrap()
        })
    });
}

criterion_group!(benches, sketch, cluster, impact, update, toy_step);
criterion_main!(benches);
