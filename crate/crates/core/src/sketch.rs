//! Gradient sketching: magnitude top-k sparsification followed by a
//! Johnson-Lindenstrauss random projection.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default fraction of gradient entries kept by [`topk_sparsify`].
pub const DEFAULT_KEEP_RATIO: f64 = 0.10;
/// Default projected dimension.
pub const DEFAULT_PROJ_DIM: usize = 1024;

/// How projection columns are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// Independent ±1/√h entries, columns normalized to unit length.
    #[default]
    Rademacher,
    /// Orthonormal columns from a thin QR of a Gaussian matrix.
    Orthogonal,
}

/// An `h × s` projection with unit-norm columns, a pure function of
/// `(h, s, seed, kind)`. Randomness comes from ChaCha8 seeded with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    h: usize,
    s: usize,
    seed: u64,
    kind: ProjectionKind,
    /// Column-major: column `j` is `columns[j*h .. (j+1)*h]`.
    columns: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn input_dim(&self) -> usize {
        self.h
    }

    pub fn output_dim(&self) -> usize {
        self.s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.h..(j + 1) * self.h]
    }

    /// `√(h/s)`, the factor that makes the unit-column map preserve squared
    /// norms in expectation.
    pub fn scale(&self) -> f64 {
        (self.h as f64 / self.s as f64).sqrt()
    }
}

pub fn make_projection(h: usize, s: usize, seed: u64) -> Result<ProjectionMatrix> {
    make_projection_with(h, s, seed, ProjectionKind::Rademacher)
}

pub fn make_projection_with(
    h: usize,
    s: usize,
    seed: u64,
    kind: ProjectionKind,
) -> Result<ProjectionMatrix> {
    if h == 0 || s == 0 {
        return Err(Error::InvalidArgument(
            "projection dims must be positive".into(),
        ));
    }
    if s > h {
        return Err(Error::InvalidArgument(format!(
            "projection output dim {s} exceeds input dim {h}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns = match kind {
        ProjectionKind::Rademacher => {
            let entry = 1.0 / (h as f64).sqrt();
            let mut cols: Vec<f64> = (0..h * s)
                .map(|_| if rng.random::<bool>() { entry } else { -entry })
                .collect();
            for col in cols.chunks_exact_mut(h) {
                let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                col.iter_mut().for_each(|v| *v /= norm);
            }
            cols
        }
        ProjectionKind::Orthogonal => {
            let gauss = DMatrix::<f64>::from_fn(h, s, |_, _| rng.sample(StandardNormal));
            let q = gauss.qr().q();
            // nalgebra storage is column-major already
            q.as_slice().to_vec()
        }
    };
    Ok(ProjectionMatrix {
        h,
        s,
        seed,
        kind,
        columns,
    })
}

/// Projects `g` to `√(h/s)·Rᵀg`.
///
/// The constant factor keeps expected squared distances unchanged; it does not
/// affect anything downstream that is scale-invariant (k-means assignments).
pub fn project(r: &ProjectionMatrix, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != r.h {
        return Err(Error::DimensionMismatch {
            expected: r.h,
            found: g.len(),
        });
    }
    let scale = r.scale();
    Ok(r
        .columns
        .chunks_exact(r.h)
        .map(|col| scale * col.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// Zeroes all but the `⌈keep_ratio·len⌉` largest-magnitude entries.
/// Ties go to the lower index.
pub fn topk_sparsify(g: &[f64], keep_ratio: f64) -> Result<Vec<f64>> {
    if g.is_empty() {
        return Err(Error::Empty("gradient vector"));
    }
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_ratio {keep_ratio} outside (0, 1]"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient vector"));
    }
    let n = g.len();
    let keep = keep_count(n, keep_ratio);
    if keep == n {
        return Ok(g.to_vec());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let by_rank = |&a: &usize, &b: &usize| {
        g[b].abs()
            .partial_cmp(&g[a].abs())
            .expect("finite")
            .then(a.cmp(&b))
    };
    idx.select_nth_unstable_by(keep - 1, by_rank);
    let mut out = vec![0.0; n];
    for &i in &idx[..keep] {
        out[i] = g[i];
    }
    Ok(out)
}

fn keep_count(n: usize, keep_ratio: f64) -> usize {
    // the epsilon absorbs products like 0.7 * 10 = 7.000000000000001
    let k = (keep_ratio * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// `⌈8·ln(m)/ε²⌉`, the dimension at which the JL lemma guarantees a
/// `(1 ± ε)` embedding of `m` points.
pub fn choose_target_dim(point_count: usize, epsilon: f64) -> Result<usize> {
    if point_count < 2 {
        return Err(Error::InvalidArgument(
            "need at least two points".into(),
        ));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside (0, 1)"
        )));
    }
    Ok((8.0 * (point_count as f64).ln() / (epsilon * epsilon)).ceil() as usize)
}

/// Top-k followed by projection, applied to a batch of vectors.
#[derive(Debug, Clone)]
pub struct Sketcher {
    pub keep_ratio: f64,
    pub projection: ProjectionMatrix,
}

impl Sketcher {
    pub fn new(keep_ratio: f64, projection: ProjectionMatrix) -> Self {
        Self {
            keep_ratio,
            projection,
        }
    }

    pub fn sketch(&self, g: &[f64]) -> Result<Vec<f64>> {
        project(&self.projection, &topk_sparsify(g, self.keep_ratio)?)
    }

    pub fn sketch_all(&self, gs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        gs.par_iter().map(|g| self.sketch(g)).collect()
    }
}
