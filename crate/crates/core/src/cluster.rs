//! Domain repartition: k-means (k-means++ seeding, Lloyd iterations) over
//! sketched gradient vectors.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradtrace::GradientTrace;
use crate::sketch::{ProjectionMatrix, Sketcher};

pub const DEFAULT_K: usize = 72;
pub const DEFAULT_MAX_ITERS: usize = 100;

/// Assignment of sample ids to `k` domains plus centroids in sketch space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPartition {
    pub k: usize,
    pub assignments: BTreeMap<u32, usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    /// Inertia measured at each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

impl DomainPartition {
    pub fn domain_of(&self, sample_id: u32) -> Option<usize> {
        self.assignments.get(&sample_id).copied()
    }

    /// Sample ids of each domain, ascending.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.k];
        for (&id, &d) in &self.assignments {
            out[d].push(id);
        }
        out
    }
}

pub fn domain_sizes(p: &DomainPartition) -> Vec<usize> {
    let mut sizes = vec![0; p.k];
    for &d in p.assignments.values() {
        sizes[d] += 1;
    }
    sizes
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        // strict comparison keeps the lowest index on ties
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // float slop can fall off the end onto a zero-weight point
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Point `i` is reported under
/// sample id `i`.
///
/// Stops when an assignment pass changes nothing or after `max_iters`
/// passes. An empty cluster is reseeded at the point farthest from its
/// current centroid, provided that distance is positive; with fewer distinct
/// points than `k` some clusters stay empty.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<DomainPartition> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("k-means input"));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={n}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be positive".into()));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut changed = 0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(&centroids, p);
            if labels[i] != j {
                labels[i] = j;
                changed += 1;
            }
            dists[i] = d;
        }
        history.push(dists.iter().sum());
        if changed == 0 {
            converged = true;
            break;
        }
        update_centroids(points, &labels, &mut centroids);
        repair_empty(points, &labels, &mut centroids);
    }

    let inertia = if converged {
        *history.last().expect("at least one pass")
    } else {
        update_centroids(points, &labels, &mut centroids);
        points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| sq_dist(p, &centroids[l]))
            .sum()
    };

    Ok(DomainPartition {
        k,
        assignments: labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (i as u32, l))
            .collect(),
        centroids,
        inertia,
        inertia_history: history,
        iterations,
        converged,
        seed,
    })
}

fn update_centroids(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for ((c, s), &m) in centroids.iter_mut().zip(sums).zip(&counts) {
        if m > 0 {
            *c = s.into_iter().map(|v| v / m as f64).collect();
        }
    }
}

fn repair_empty(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let mut taken = vec![false; points.len()];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i]])))
            .fold((usize::MAX, 0.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
        if far.0 != usize::MAX {
            taken[far.0] = true;
            centroids[j] = points[far.0].clone();
        }
    }
}

/// How the trace's `domain_hint` labels are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintMode {
    /// Cluster everything together; hints are ignored.
    #[default]
    Global,
    /// Cluster each hint group separately with `k` split in proportion to
    /// group size (every group gets at least one domain).
    PerHint,
}

/// Top-k, project, then k-means over every record of `trace`.
///
/// Records are processed in ascending sample-id order, so the result does not
/// depend on record order in the trace.
pub fn repartition(
    trace: &GradientTrace,
    keep_ratio: f64,
    proj: &ProjectionMatrix,
    k: usize,
    seed: u64,
) -> Result<DomainPartition> {
    repartition_with(trace, keep_ratio, proj, k, seed, DEFAULT_MAX_ITERS, HintMode::Global)
}

pub fn repartition_with(
    trace: &GradientTrace,
    keep_ratio: f64,
    proj: &ProjectionMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    hints: HintMode,
) -> Result<DomainPartition> {
    if trace.dim != proj.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: proj.input_dim(),
            found: trace.dim,
        });
    }
    trace.validate()?;
    let mut order: Vec<usize> = (0..trace.len()).collect();
    order.sort_by_key(|&i| trace.records[i].sample_id);
    let ids: Vec<u32> = order.iter().map(|&i| trace.records[i].sample_id).collect();
    let raw: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| trace.records[i].vector.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let sketched = Sketcher::new(keep_ratio, proj.clone()).sketch_all(&raw)?;

    match hints {
        HintMode::Global => {
            let mut p = kmeans(&sketched, k, seed, max_iters)?;
            p.assignments = p
                .assignments
                .into_iter()
                .map(|(i, d)| (ids[i as usize], d))
                .collect();
            Ok(p)
        }
        HintMode::PerHint => {
            let hints: Vec<i32> = order.iter().map(|&i| trace.records[i].domain_hint).collect();
            per_hint(&sketched, &ids, &hints, k, seed, max_iters)
        }
    }
}

fn per_hint(
    points: &[Vec<f64>],
    ids: &[u32],
    hints: &[i32],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<DomainPartition> {
    let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &h) in hints.iter().enumerate() {
        groups.entry(h).or_default().push(i);
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let alloc = allocate_proportional(&sizes, k)?;

    let mut assignments = BTreeMap::new();
    let mut centroids = Vec::with_capacity(k);
    let mut inertia = 0.0;
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    for ((members, &kg), g) in groups.values().zip(&alloc).zip(0u64..) {
        let pts: Vec<Vec<f64>> = members.iter().map(|&i| points[i].clone()).collect();
        let part = kmeans(&pts, kg, seed.wrapping_add(g), max_iters)?;
        let offset = centroids.len();
        for (local, d) in part.assignments {
            assignments.insert(ids[members[local as usize]], offset + d);
        }
        centroids.extend(part.centroids);
        inertia += part.inertia;
        // pad shorter histories with their final value so the sum stays monotone
        let len = history.len().max(part.inertia_history.len());
        let pad = |h: &[f64], i: usize| h.get(i).or(h.last()).copied().unwrap_or(0.0);
        history = (0..len)
            .map(|i| pad(&history, i) + pad(&part.inertia_history, i))
            .collect();
        iterations = iterations.max(part.iterations);
        converged &= part.converged;
    }
    Ok(DomainPartition {
        k,
        assignments,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
        converged,
        seed,
    })
}

/// Largest-remainder split of `k` over groups, each getting between 1 and its
/// size.
fn allocate_proportional(sizes: &[usize], k: usize) -> Result<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    if k < sizes.len() || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} cannot cover {} hint groups of {n} samples",
            sizes.len()
        )));
    }
    let quotas: Vec<f64> = sizes.iter().map(|&s| k as f64 * s as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas
        .iter()
        .zip(sizes)
        .map(|(q, &s)| (q.floor() as usize).clamp(1, s))
        .collect();
    loop {
        let total: usize = alloc.iter().sum();
        if total == k {
            return Ok(alloc);
        }
        if total < k {
            let best = (0..sizes.len())
                .filter(|&g| alloc[g] < sizes[g])
                .max_by(|&a, &b| {
                    (quotas[a] - alloc[a] as f64)
                        .partial_cmp(&(quotas[b] - alloc[b] as f64))
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .expect("k <= n");
            alloc[best] += 1;
        } else {
            let worst = (0..sizes.len())
                .filter(|&g| alloc[g] > 1)
                .min_by(|&a, &b| {
                    (quotas[a] - alloc[a] as f64)
                        .partial_cmp(&(quotas[b] - alloc[b] as f64))
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .expect("k >= groups");
            alloc[worst] -= 1;
        }
    }
}

/// JSON sidecar written next to the partition CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSidecar {
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    pub domain_sizes: Vec<usize>,
    pub centroid_norms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl PartitionSidecar {
    pub fn from_partition(p: &DomainPartition, config: Option<serde_json::Value>) -> Self {
        Self {
            k: p.k,
            seed: p.seed,
            inertia: p.inertia,
            iterations: p.iterations,
            converged: p.converged,
            domain_sizes: domain_sizes(p),
            centroid_norms: p
                .centroids
                .iter()
                .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect(),
            config,
        }
    }
}

/// Writes `sample_id,domain` rows in ascending sample-id order.
pub fn write_partition_csv<W: Write>(p: &DomainPartition, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["sample_id", "domain"])?;
    for (id, d) in &p.assignments {
        w.write_record([id.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `sample_id,domain` CSV back into an assignment map.
pub fn read_partition_csv<R: std::io::Read>(source: R) -> Result<BTreeMap<u32, usize>> {
    let mut r = csv::Reader::from_reader(source);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample_id", "domain"] {
        return Err(Error::InvalidArgument(
            "partition CSV header must be `sample_id,domain`".into(),
        ));
    }
    let mut out = BTreeMap::new();
    for row in r.deserialize::<(u32, usize)>() {
        let (id, d) = row?;
        if out.insert(id, d).is_some() {
            return Err(Error::InvalidArgument(format!(
                "sample {id} appears twice in partition"
            )));
        }
    }
    Ok(out)
}
