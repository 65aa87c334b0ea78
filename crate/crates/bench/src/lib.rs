//! Deterministic fixtures shared by the benchmarks.

use mixsched::toysim::Sample;
use mixsched::{DomainGradient, FimDiagonal, GradientTrace, LossHistory, TaskGradient, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| uniform_vec(&mut r, dim)).collect()
}

pub fn trace(n: usize, dim: usize, seed: u64) -> GradientTrace {
    let mut r = rng(seed);
    let mut t = GradientTrace::new(dim, "bench");
    for id in 0..n as u32 {
        let v = (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect();
        t.push(TraceRecord::new(id, -1, v));
    }
    t
}

/// Domain and task mean gradients with one Fisher diagonal per task.
pub fn impact_inputs(
    k: usize,
    m: usize,
    dim: usize,
    seed: u64,
) -> (Vec<DomainGradient>, Vec<TaskGradient>, Vec<FimDiagonal>) {
    let mut r = rng(seed);
    let domains = (0..k).map(|i| DomainGradient::with_mean(i, uniform_vec(&mut r, dim))).collect();
    let tasks = (0..m).map(|j| TaskGradient::new(j, uniform_vec(&mut r, dim), 32)).collect();
    let fims = (0..m)
        .map(|_| FimDiagonal {
            values: (0..dim).map(|_| r.random_range(0.0..2.0)).collect(),
            sample_count: 32,
        })
        .collect();
    (domains, tasks, fims)
}

/// Geometrically decaying loss curves sampled every `every` steps.
pub fn histories(m: usize, points: usize, every: u64) -> Vec<LossHistory> {
    (0..m as u32)
        .map(|task| {
            let mut h = LossHistory::new(task);
            for i in 0..points as u64 {
                let t = i * every;
                let loss = 1.5 * (-0.002 * t as f64).exp() + 0.4 + 0.01 * task as f64;
                h.push(t, loss).expect("increasing steps");
            }
            h
        })
        .collect()
}

pub fn batch(n: usize, n_in: usize, n_c: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Sample {
            features: uniform_vec(&mut r, n_in),
            label: r.random_range(0..n_c),
            domain: 0,
        })
        .collect()
}
