//! Domain-to-task impact.
//!
//! The primary metric is the second-order expansion of the KL divergence
//! between the model moved by a domain's mean gradient and the model moved by
//! a task's mean gradient, `½ Δᵀ F Δ` with `Δ = ∇ℓ_task − ∇ℓ_domain` and `F`
//! the diagonal Fisher information at the current parameters. Gradient
//! alignment `⟨∇ℓ_domain, ∇ℓ_task⟩` is kept as a baseline.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{median, softmax};

/// Added to the column median before scaling.
pub const MEDIAN_EPS: f64 = 1e-12;
/// Default decay of the per-domain running gradient mean.
pub const DEFAULT_DOMAIN_DECAY: f64 = 0.9;
/// Default per-task batch used to estimate the Fisher diagonal.
pub const DEFAULT_FIM_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactMetric {
    #[default]
    FimKl,
    #[serde(alias = "dga")]
    DgaAlignment,
}

impl ImpactMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ImpactMetric::FimKl => "fim_kl",
            ImpactMetric::DgaAlignment => "dga_alignment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fim_kl" => Some(ImpactMetric::FimKl),
            "dga" | "dga_alignment" => Some(ImpactMetric::DgaAlignment),
            _ => None,
        }
    }
}

/// How a divergence-valued column becomes sampling scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactDirection {
    /// Lower divergence scores higher (median-scaled negated softmax).
    #[default]
    Aligned,
    /// Divergence used as-is, divided by the column sum.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimDiagonal {
    pub values: Vec<f64>,
    pub sample_count: usize,
}

impl FimDiagonal {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn identity(d: usize) -> Self {
        Self {
            values: vec![1.0; d],
            sample_count: 1,
        }
    }
}

/// Running mean of one domain's gradient over the parameter slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainGradient {
    pub domain: usize,
    pub mean: Vec<f64>,
    /// Accumulated sample mass; zero until the first update.
    pub weight: f64,
    pub decay: f64,
}

impl DomainGradient {
    pub fn new(domain: usize, dim: usize, decay: f64) -> Self {
        Self {
            domain,
            mean: vec![0.0; dim],
            weight: 0.0,
            decay,
        }
    }

    pub fn with_mean(domain: usize, mean: Vec<f64>) -> Self {
        Self {
            domain,
            mean,
            weight: 1.0,
            decay: DEFAULT_DOMAIN_DECAY,
        }
    }

    /// In-place form of [`update_domain_gradient`].
    pub fn update(&mut self, batch_mean: &[f64], batch_weight: f64) -> Result<()> {
        if batch_mean.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: batch_mean.len(),
            });
        }
        if !(batch_weight.is_finite() && batch_weight > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "batch weight {batch_weight} must be positive"
            )));
        }
        if batch_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("domain batch gradient"));
        }
        let keep = if self.weight > 0.0 { self.decay } else { 0.0 };
        for (m, b) in self.mean.iter_mut().zip(batch_mean) {
            *m = keep * *m + (1.0 - keep) * b;
        }
        self.weight += batch_weight;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGradient {
    pub task: usize,
    pub mean: Vec<f64>,
    pub batch_size: usize,
}

impl TaskGradient {
    pub fn new(task: usize, mean: Vec<f64>, batch_size: usize) -> Self {
        Self {
            task,
            mean,
            batch_size,
        }
    }
}

/// `F[j] = mean over samples of g[j]²`.
pub fn estimate_fim_diagonal(per_sample_gradients: &[Vec<f64>]) -> Result<FimDiagonal> {
    let weights = vec![1.0; per_sample_gradients.len()];
    estimate_fim_diagonal_weighted(per_sample_gradients, &weights)
}

/// Weighted form: `F[j] = Σ w·g[j]² / Σ w`. Exhaustive enumeration of a
/// discrete model uses the outcome probabilities as weights.
pub fn estimate_fim_diagonal_weighted(grads: &[Vec<f64>], weights: &[f64]) -> Result<FimDiagonal> {
    let first = grads.first().ok_or(Error::Empty("per-sample gradients"))?;
    if weights.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            expected: grads.len(),
            found: weights.len(),
        });
    }
    let d = first.len();
    let mut values = vec![0.0; d];
    let mut total = 0.0;
    for (g, &w) in grads.iter().zip(weights) {
        if g.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: g.len(),
            });
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidArgument(format!("bad sample weight {w}")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("per-sample gradient"));
        }
        for (f, x) in values.iter_mut().zip(g) {
            *f += w * x * x;
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::InvalidArgument("sample weights sum to zero".into()));
    }
    values.iter_mut().for_each(|f| *f /= total);
    Ok(FimDiagonal {
        values,
        sample_count: grads.len(),
    })
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// `½ Σ_j F[j]·(task[j] − domain[j])²`.
pub fn fim_impact(dg: &DomainGradient, tg: &TaskGradient, fim: &FimDiagonal) -> Result<f64> {
    check_dims(fim.dim(), dg.mean.len())?;
    check_dims(fim.dim(), tg.mean.len())?;
    Ok(0.5
        * fim
            .values
            .iter()
            .zip(&dg.mean)
            .zip(&tg.mean)
            .map(|((f, d), t)| f * (t - d) * (t - d))
            .sum::<f64>())
}

/// Gradient-alignment baseline `⟨domain, task⟩`.
pub fn dga_impact(dg: &DomainGradient, tg: &TaskGradient) -> Result<f64> {
    check_dims(dg.mean.len(), tg.mean.len())?;
    Ok(dg.mean.iter().zip(&tg.mean).map(|(a, b)| a * b).sum())
}

pub fn update_domain_gradient(
    dg: &DomainGradient,
    batch_mean: &[f64],
    batch_weight: f64,
) -> Result<DomainGradient> {
    let mut next = dg.clone();
    next.update(batch_mean, batch_weight)?;
    Ok(next)
}

/// `k × m` impact scores, row = domain, column = task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactMatrix {
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub metric: ImpactMetric,
    pub direction: ImpactDirection,
}

impl ImpactMatrix {
    pub fn domains(&self) -> usize {
        self.raw.len()
    }

    pub fn tasks(&self) -> usize {
        self.raw.first().map_or(0, Vec::len)
    }

    /// Builds a matrix from precomputed normalized scores (e.g. read back from
    /// CSV), keeping `raw` alongside.
    pub fn from_parts(
        raw: Vec<Vec<f64>>,
        normalized: Vec<Vec<f64>>,
        metric: ImpactMetric,
    ) -> Result<Self> {
        check_dims(raw.len(), normalized.len())?;
        for (r, n) in raw.iter().zip(&normalized) {
            check_dims(r.len(), n.len())?;
        }
        Ok(Self {
            raw,
            normalized,
            metric,
            direction: ImpactDirection::Aligned,
        })
    }
}

pub fn build_impact_matrix(
    domain_grads: &[DomainGradient],
    task_grads: &[TaskGradient],
    fims: &[FimDiagonal],
    metric: ImpactMetric,
) -> Result<ImpactMatrix> {
    build_impact_matrix_with(domain_grads, task_grads, fims, metric, ImpactDirection::Aligned)
}

pub fn build_impact_matrix_with(
    domain_grads: &[DomainGradient],
    task_grads: &[TaskGradient],
    fims: &[FimDiagonal],
    metric: ImpactMetric,
    direction: ImpactDirection,
) -> Result<ImpactMatrix> {
    if domain_grads.is_empty() {
        return Err(Error::Empty("domain gradients"));
    }
    if task_grads.is_empty() {
        return Err(Error::Empty("task gradients"));
    }
    if metric == ImpactMetric::FimKl {
        check_dims(task_grads.len(), fims.len())?;
    }
    let raw = domain_grads
        .iter()
        .map(|dg| {
            task_grads
                .iter()
                .enumerate()
                .map(|(j, tg)| match metric {
                    ImpactMetric::FimKl => fim_impact(dg, tg, &fims[j]),
                    ImpactMetric::DgaAlignment => dga_impact(dg, tg),
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized = match (metric, direction) {
        (ImpactMetric::FimKl, ImpactDirection::Aligned) => normalize_impact(&raw),
        (ImpactMetric::FimKl, ImpactDirection::Raw) => normalize_sum(&raw),
        (ImpactMetric::DgaAlignment, _) => normalize_alignment(&raw),
    };
    Ok(ImpactMatrix {
        raw,
        normalized,
        metric,
        direction,
    })
}

fn map_columns(raw: &[Vec<f64>], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let k = raw.len();
    let m = raw.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; m]; k];
    for j in 0..m {
        let col: Vec<f64> = raw.iter().map(|row| row[j]).collect();
        for (i, v) in f(&col).into_iter().enumerate() {
            out[i][j] = v;
        }
    }
    out
}

/// Per task column: `softmax_i(−raw[i] / (median(column) + ε))`.
///
/// Columns land on the simplex, the smallest divergence gets the largest
/// score, and rescaling a column leaves it unchanged. An all-zero column
/// becomes uniform.
pub fn normalize_impact(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    map_columns(raw, |col| {
        let scale = median(col) + MEDIAN_EPS;
        let logits: Vec<f64> = col.iter().map(|v| -v / scale).collect();
        softmax(&logits)
    })
}

/// Alignment scores may be negative: `softmax_i(raw[i] / (median|column| + ε))`.
pub fn normalize_alignment(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    map_columns(raw, |col| {
        let abs: Vec<f64> = col.iter().map(|v| v.abs()).collect();
        let scale = median(&abs) + MEDIAN_EPS;
        let logits: Vec<f64> = col.iter().map(|v| v / scale).collect();
        softmax(&logits)
    })
}

/// `raw[i] / Σ raw`, uniform for an all-zero column.
pub fn normalize_sum(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    map_columns(raw, |col| {
        let total: f64 = col.iter().sum();
        if total > 0.0 {
            col.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / col.len() as f64; col.len()]
        }
    })
}

/// Writes `domain,task,raw,normalized,metric` rows, domain-major.
pub fn write_impact_csv<W: Write>(m: &ImpactMatrix, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["domain", "task", "raw", "normalized", "metric"])?;
    for (i, (raw, norm)) in m.raw.iter().zip(&m.normalized).enumerate() {
        for (j, (r, n)) in raw.iter().zip(norm).enumerate() {
            w.write_record([
                i.to_string(),
                j.to_string(),
                r.to_string(),
                n.to_string(),
                m.metric.as_str().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ImpactRow {
    domain: usize,
    task: usize,
    raw: f64,
    normalized: f64,
    metric: String,
}

/// Reads an impact CSV back into a dense matrix. Every `(domain, task)` cell
/// must appear exactly once.
pub fn read_impact_csv<R: Read>(source: R) -> Result<ImpactMatrix> {
    let mut r = csv::Reader::from_reader(source);
    let rows: Vec<ImpactRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::Empty("impact CSV"));
    }
    let k = rows.iter().map(|r| r.domain).max().unwrap() + 1;
    let m = rows.iter().map(|r| r.task).max().unwrap() + 1;
    let metric = ImpactMetric::parse(&rows[0].metric)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{}`", rows[0].metric)))?;
    let mut raw = vec![vec![f64::NAN; m]; k];
    let mut normalized = vec![vec![f64::NAN; m]; k];
    for row in &rows {
        if ImpactMetric::parse(&row.metric) != Some(metric) {
            return Err(Error::InvalidArgument("mixed metrics in impact CSV".into()));
        }
        if !raw[row.domain][row.task].is_nan() {
            return Err(Error::InvalidArgument(format!(
                "duplicate impact cell ({}, {})",
                row.domain, row.task
            )));
        }
        raw[row.domain][row.task] = row.raw;
        normalized[row.domain][row.task] = row.normalized;
    }
    if rows.len() != k * m {
        return Err(Error::InvalidArgument(format!(
            "impact CSV has {} cells, expected {k}×{m}",
            rows.len()
        )));
    }
    ImpactMatrix::from_parts(raw, normalized, metric)
}
