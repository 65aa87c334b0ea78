//! One-hidden-layer tanh network with a softmax head and hand-written backprop.
//!
//! Parameters are flattened as `W1 (n_h × n_in) | b1 | W2 (n_c × n_h) | b2`,
//! all row-major, so the trailing slice is the output layer.

use std::borrow::Borrow;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SLICE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    /// Generator index the sample was drawn from.
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub n_in: usize,
    pub n_h: usize,
    pub n_c: usize,
    pub params: Vec<f64>,
    /// First index of the trailing parameter slice.
    pub slice_start: usize,
}

pub fn param_count(n_in: usize, n_h: usize, n_c: usize) -> usize {
    n_in * n_h + n_h + n_h * n_c + n_c
}

impl ToyModel {
    pub fn zeros(n_in: usize, n_h: usize, n_c: usize) -> Result<Self> {
        if n_in == 0 || n_h == 0 || n_c < 2 {
            return Err(Error::InvalidArgument(format!(
                "model dims ({n_in}, {n_h}, {n_c}) need n_in, n_h >= 1 and n_c >= 2"
            )));
        }
        let n = param_count(n_in, n_h, n_c);
        let mut m = Self {
            n_in,
            n_h,
            n_c,
            params: vec![0.0; n],
            slice_start: 0,
        };
        m.set_slice_fraction(DEFAULT_SLICE_FRACTION)?;
        Ok(m)
    }

    /// Scaled Gaussian weights, zero biases.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_h: usize, n_c: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(n_in, n_h, n_c)?;
        let s1 = (1.0 / n_in as f64).sqrt();
        let s2 = (1.0 / n_h as f64).sqrt();
        let (w1, w2) = (m.w1_range(), m.w2_range());
        for p in &mut m.params[w1] {
            *p = s1 * rng.sample::<f64, _>(StandardNormal);
        }
        for p in &mut m.params[w2] {
            *p = s2 * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(m)
    }

    /// Slice covers the last `ceil(fraction · P)` parameters (at least one).
    pub fn set_slice_fraction(&mut self, fraction: f64) -> Result<()> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "slice fraction {fraction} outside (0, 1]"
            )));
        }
        let n = self.params.len();
        let len = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        self.slice_start = n - len;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn slice_len(&self) -> usize {
        self.params.len() - self.slice_start
    }

    pub fn slice<'a>(&self, full: &'a [f64]) -> &'a [f64] {
        &full[self.slice_start..]
    }

    fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.n_in * self.n_h
    }

    fn b1_offset(&self) -> usize {
        self.n_in * self.n_h
    }

    fn w2_range(&self) -> std::ops::Range<usize> {
        let s = self.b1_offset() + self.n_h;
        s..s + self.n_h * self.n_c
    }

    fn b2_offset(&self) -> usize {
        self.w2_range().end
    }

    fn check(&self, s: &Sample) -> Result<()> {
        if s.features.len() != self.n_in {
            return Err(Error::DimensionMismatch {
                expected: self.n_in,
                found: s.features.len(),
            });
        }
        if s.label >= self.n_c {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                s.label, self.n_c
            )));
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64], h: &mut [f64]) {
        let b1 = self.b1_offset();
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.params[j * self.n_in..(j + 1) * self.n_in];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.params[b1 + j];
            *hj = z.tanh();
        }
    }

    /// Class probabilities for one input.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.n_h];
        self.hidden(x, &mut h);
        let mut p = vec![0.0; self.n_c];
        self.output(&h, &mut p);
        p
    }

    fn output(&self, h: &[f64], p: &mut [f64]) {
        let w2 = self.w2_range().start;
        let b2 = self.b2_offset();
        for (c, pc) in p.iter_mut().enumerate() {
            let row = &self.params[w2 + c * self.n_h..w2 + (c + 1) * self.n_h];
            *pc = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.params[b2 + c];
        }
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in p.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in p.iter_mut() {
            *v /= total;
        }
    }

    /// Accumulates `scale · ∇ℓ(sample)` into `grad`; returns the sample loss.
    fn accumulate(&self, s: &Sample, scale: f64, grad: &mut [f64], h: &mut [f64], p: &mut [f64]) -> f64 {
        self.hidden(&s.features, h);
        self.output(h, p);
        let loss = -p[s.label].max(f64::MIN_POSITIVE).ln();
        let w2 = self.w2_range().start;
        let b1 = self.b1_offset();
        let b2 = self.b2_offset();
        // dz2 = p − onehot
        p[s.label] -= 1.0;
        for c in 0..self.n_c {
            let d = scale * p[c];
            grad[b2 + c] += d;
            let row = w2 + c * self.n_h;
            for j in 0..self.n_h {
                grad[row + j] += d * h[j];
            }
        }
        for j in 0..self.n_h {
            let back: f64 = p
                .iter()
                .enumerate()
                .map(|(c, pc)| pc * self.params[w2 + c * self.n_h + j])
                .sum();
            let dz1 = scale * back * (1.0 - h[j] * h[j]);
            grad[b1 + j] += dz1;
            let row = j * self.n_in;
            for (i, x) in s.features.iter().enumerate() {
                grad[row + i] += dz1 * x;
            }
        }
        loss
    }
}

/// Mean cross-entropy over the batch.
pub fn forward_loss<S: Borrow<Sample>>(model: &ToyModel, batch: &[S]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut total = 0.0;
    for s in batch {
        let s = s.borrow();
        model.check(s)?;
        let p = model.predict_proba(&s.features);
        total -= p[s.label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / batch.len() as f64)
}

/// Fraction of samples whose arg-max class equals the label.
pub fn accuracy<S: Borrow<Sample>>(model: &ToyModel, batch: &[S]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut hits = 0usize;
    for s in batch {
        let s = s.borrow();
        model.check(s)?;
        let p = model.predict_proba(&s.features);
        let best = (0..p.len())
            .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        hits += usize::from(best == s.label);
    }
    Ok(hits as f64 / batch.len() as f64)
}

/// Mean loss and its exact gradient over the batch.
pub fn loss_and_grad<S: Borrow<Sample>>(model: &ToyModel, batch: &[S]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut grad = vec![0.0; model.param_count()];
    let mut h = vec![0.0; model.n_h];
    let mut p = vec![0.0; model.n_c];
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let s = s.borrow();
        model.check(s)?;
        loss += model.accumulate(s, scale, &mut grad, &mut h, &mut p);
    }
    Ok((loss * scale, grad))
}

/// Gradient of [`forward_loss`] with respect to the flat parameters.
pub fn backward<S: Borrow<Sample>>(model: &ToyModel, batch: &[S]) -> Result<Vec<f64>> {
    loss_and_grad(model, batch).map(|(_, g)| g)
}

/// Per-sample gradients restricted to the trailing slice.
pub fn per_sample_slice_grads<S: Borrow<Sample>>(model: &ToyModel, batch: &[S]) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|s| backward(model, std::slice::from_ref(s.borrow())).map(|g| g[model.slice_start..].to_vec()))
        .collect()
}

/// `θ ← θ − lr·grad`.
pub fn sgd_step(model: &ToyModel, grad: &[f64], lr: f64) -> Result<ToyModel> {
    if grad.len() != model.param_count() {
        return Err(Error::DimensionMismatch {
            expected: model.param_count(),
            found: grad.len(),
        });
    }
    let mut next = model.clone();
    next.params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
    Ok(next)
}
