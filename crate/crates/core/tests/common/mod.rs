//! Reference implementations used as test oracles. Everything here is
//! computed by exhaustive enumeration or closed forms, independently of the
//! library code under test.
#![allow(dead_code)]

use mixsched::{GradientTrace, TraceRecord};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Categorical distribution parameterized directly by its logits.
pub struct Categorical {
    pub logits: Vec<f64>,
}

impl Categorical {
    pub fn new(logits: Vec<f64>) -> Self {
        Self { logits }
    }

    pub fn classes(&self) -> usize {
        self.logits.len()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + self.logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        self.logits.iter().map(|z| z - lse).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs().into_iter().map(f64::exp).collect()
    }

    /// ∇θ log p(y) = e_y − p.
    pub fn score(&self, y: usize) -> Vec<f64> {
        let p = self.probs();
        (0..p.len())
            .map(|i| if i == y { 1.0 } else { 0.0 } - p[i])
            .collect()
    }

    /// ∇²θ log p(y); the same for every outcome: −(diag p − p pᵀ).
    pub fn hessian(&self) -> Vec<Vec<f64>> {
        let p = self.probs();
        let n = p.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| p[i] * p[j] - if i == j { p[i] } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// E[s sᵀ] by enumeration over outcomes.
    pub fn fisher(&self) -> Vec<Vec<f64>> {
        let p = self.probs();
        let n = p.len();
        let mut f = vec![vec![0.0; n]; n];
        for y in 0..n {
            let s = self.score(y);
            for i in 0..n {
                for j in 0..n {
                    f[i][j] += p[y] * s[i] * s[j];
                }
            }
        }
        f
    }

    pub fn shifted(&self, delta: &[f64]) -> Self {
        Self::new(self.logits.iter().zip(delta).map(|(a, b)| a + b).collect())
    }
}

/// Exact KL(p ‖ q) by summing over all outcomes.
pub fn kl_categorical(p: &Categorical, q: &Categorical) -> f64 {
    let lp = p.log_probs();
    let lq = q.log_probs();
    lp.iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum()
}

pub fn quadratic_form(f: &[Vec<f64>], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..v.len() {
        for j in 0..v.len() {
            acc += v[i] * f[i][j] * v[j];
        }
    }
    acc
}

/// Independent Bernoulli heads; the Fisher matrix in logit space is exactly
/// diagonal, so a diagonal quadratic form is the full second-order term.
pub struct BernoulliHeads {
    pub logits: Vec<f64>,
}

impl BernoulliHeads {
    pub fn probs(&self) -> Vec<f64> {
        self.logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
    }

    /// Every joint outcome with its probability and score vector.
    pub fn enumerate(&self) -> Vec<(f64, Vec<f64>)> {
        let p = self.probs();
        let n = p.len();
        (0..1usize << n)
            .map(|mask| {
                let mut w = 1.0;
                let mut s = Vec::with_capacity(n);
                for (i, &pi) in p.iter().enumerate() {
                    let y = ((mask >> i) & 1) as f64;
                    w *= if y == 1.0 { pi } else { 1.0 - pi };
                    s.push(y - pi);
                }
                (w, s)
            })
            .collect()
    }

    pub fn shifted(&self, delta: &[f64]) -> Self {
        Self {
            logits: self.logits.iter().zip(delta).map(|(a, b)| a + b).collect(),
        }
    }
}

pub fn kl_bernoulli_heads(p: &BernoulliHeads, q: &BernoulliHeads) -> f64 {
    p.probs()
        .iter()
        .zip(q.probs())
        .map(|(&a, b)| a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln())
        .sum()
}

/// Random trace with unique ids in shuffled order and arbitrary f32 bit
/// patterns restricted to finite values.
pub fn random_trace<R: Rng>(rng: &mut R, max_dim: usize, max_records: usize) -> GradientTrace {
    let dim = rng.random_range(1..=max_dim);
    let n = rng.random_range(0..=max_records);
    let mut trace = GradientTrace::new(dim, "fuzz");
    let ids = rand::seq::index::sample(rng, 1_000_000, n);
    for id in ids.iter() {
        let hint = rng.random_range(-1..8);
        let v = (0..dim).map(|_| finite_f32(rng)).collect();
        trace.push(TraceRecord::new(id as u32, hint, v));
    }
    trace
}

fn finite_f32<R: Rng>(rng: &mut R) -> f32 {
    loop {
        let x = f32::from_bits(rng.random());
        if x.is_finite() {
            return x;
        }
    }
}

/// Two isotropic blobs at ±centre·1 with unit variance; returns points and
/// generating labels.
pub fn two_blobs<R: Rng>(rng: &mut R, dim: usize, per_blob: usize, centre: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut points = Vec::with_capacity(2 * per_blob);
    let mut labels = Vec::with_capacity(2 * per_blob);
    for (label, sign) in [(0usize, 1.0), (1, -1.0)] {
        for _ in 0..per_blob {
            let noise = gaussian_vec(rng, dim, 1.0);
            points.push(noise.iter().map(|e| sign * centre + e).collect());
            labels.push(label);
        }
    }
    (points, labels)
}

/// Fraction of points whose assignment agrees with `truth` under the best
/// relabeling of two clusters.
pub fn two_label_agreement(assigned: &[usize], truth: &[usize]) -> f64 {
    let same = assigned.iter().zip(truth).filter(|(a, t)| a == t).count();
    let n = truth.len();
    same.max(n - same) as f64 / n as f64
}
