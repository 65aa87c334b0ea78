//! Sampling-probability state and the periodic re-weighting step.
//!
//! One update, in order: per-task loss improvement and decay-curve
//! potential, per-domain utility `Σ_j impact[i][j]·(ΔL_j + Lp_j) / p_prev[i]`,
//! softmax target, EMA with the previous probabilities, then a floor and
//! renormalization onto the simplex.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradtrace::{DecayFit, LossHistory};
use crate::impact::ImpactMatrix;
use crate::numeric::{mean, softmax};

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_TAU: u64 = 4000;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
/// Fewest loss points needed before a decay curve is fitted.
pub const DEFAULT_FIT_MIN_POINTS: usize = 3;
const MAX_FIT_ITERS: usize = 50;

/// Default probability floor for `k` domains.
pub fn default_floor(k: usize) -> f64 {
    1e-4 / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingState {
    pub k: usize,
    pub probs: Vec<f64>,
    pub prev_probs: Vec<f64>,
    pub beta: f64,
    pub update_count: u64,
    pub tau: u64,
    pub floor: f64,
}

impl SamplingState {
    /// Uniform state over `k` domains.
    pub fn new(k: usize, beta: f64, tau: u64, floor: f64) -> Result<Self> {
        let uniform = vec![1.0 / k.max(1) as f64; k];
        Self::with_probs(uniform, beta, tau, floor)
    }

    pub fn with_probs(probs: Vec<f64>, beta: f64, tau: u64, floor: f64) -> Result<Self> {
        let k = probs.len();
        if k == 0 {
            return Err(Error::Empty("sampling state"));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
        }
        if tau == 0 {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        if !(floor >= 0.0 && floor * (k as f64) < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "floor {floor} infeasible for {k} domains"
            )));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "initial probabilities must lie on the simplex".into(),
            ));
        }
        let probs = project_with_floor(&probs, floor);
        Ok(Self {
            k,
            prev_probs: probs.clone(),
            probs,
            beta,
            update_count: 0,
            tau,
            floor,
        })
    }
}

/// Pre-softmax domain scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityVector {
    pub values: Vec<f64>,
}

/// True iff `step > 0` and `step` is a multiple of `tau`.
pub fn should_update(state: &SamplingState, step: u64) -> bool {
    step > 0 && step % state.tau == 0
}

/// Last-but-one loss minus last loss, clamped at zero.
pub fn loss_improvement(history: &LossHistory) -> Result<f64> {
    let n = history.points.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "loss improvement needs two points, task {} has {n}",
            history.task_id
        )));
    }
    Ok((history.points[n - 2].loss - history.points[n - 1].loss).max(0.0))
}

/// `max(0, current_loss − (a·e^{−b(t+τ)} + c))`.
pub fn potential(fit: &DecayFit, t: u64, tau: u64, current_loss: f64) -> f64 {
    let predicted = fit.predict((t + tau) as f64);
    let lp = current_loss - predicted;
    if lp.is_finite() {
        lp.max(0.0)
    } else {
        0.0
    }
}

/// Fits `loss(t) = a·e^{−bt} + c` with `b ≥ 0`.
///
/// Start: `c` just below the minimum loss, `(a, b)` from a log-linear
/// regression of `ln(loss − c)` on `t`. Then at most 50 damped Gauss-Newton
/// steps with `b` projected onto `b ≥ 0`. Histories that do not decrease, fits
/// that fail to converge, and fits worse than the constant model all return
/// the constant fit `a = 0, b = 0, c = mean(loss)`.
pub fn fit_decay(history: &LossHistory) -> Result<DecayFit> {
    let n = history.points.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs three points, task {} has {n}",
            history.task_id
        )));
    }
    let ts: Vec<f64> = history.points.iter().map(|p| p.step as f64).collect();
    let ls: Vec<f64> = history.points.iter().map(|p| p.loss).collect();
    let avg = mean(&ls);
    let const_sse: f64 = ls.iter().map(|l| (l - avg) * (l - avg)).sum();
    let constant = DecayFit::constant(avg, (const_sse / n as f64).sqrt());

    let lo = ls.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * avg.abs().max(1.0) || ls[n - 1] >= ls[0] {
        return Ok(constant);
    }

    // work in u = (t − t0)/span so the rate is O(1)
    let t0 = ts[0];
    let span = ts[n - 1] - t0;
    let us: Vec<f64> = ts.iter().map(|t| (t - t0) / span).collect();

    let c0 = lo - 0.05 * (hi - lo);
    let ys: Vec<f64> = ls.iter().map(|l| (l - c0).ln()).collect();
    let (mu, my) = (mean(&us), mean(&ys));
    let sxy: f64 = us.iter().zip(&ys).map(|(u, y)| (u - mu) * (y - my)).sum();
    let sxx: f64 = us.iter().map(|u| (u - mu) * (u - mu)).sum();
    let slope = sxy / sxx;
    let mut params = Vector3::new((my - slope * mu).exp(), (-slope).max(1e-3), c0);

    let sse = |p: &Vector3<f64>| -> f64 {
        us.iter()
            .zip(&ls)
            .map(|(u, l)| {
                let r = p[0] * (-p[1] * u).exp() + p[2] - l;
                r * r
            })
            .sum()
    };

    let mut current = sse(&params);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_FIT_ITERS {
        if current <= 1e-28 * n as f64 {
            converged = true;
            break;
        }
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (u, l) in us.iter().zip(&ls) {
            let e = (-params[1] * u).exp();
            let r = params[0] * e + params[2] - l;
            let j = Vector3::new(e, -params[0] * u * e, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut stepped = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = params + delta;
            trial[1] = trial[1].max(0.0);
            let trial_sse = sse(&trial);
            if trial_sse.is_finite() && trial_sse <= current {
                let gain = current - trial_sse;
                let step = (trial - params).norm() / (params.norm() + 1e-12);
                params = trial;
                current = trial_sse;
                lambda = (lambda / 10.0).max(1e-12);
                stepped = true;
                if gain <= 1e-14 * current.max(1e-300) || step < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        // no damping level reduces the error: we are at a minimum
        if !stepped || converged {
            converged = true;
            break;
        }
    }

    if !converged || !current.is_finite() || current > const_sse {
        return Ok(constant);
    }
    let b = params[1] / span;
    let a = params[0] * (b * t0).exp();
    if !(a.is_finite() && b.is_finite()) {
        return Ok(constant);
    }
    Ok(DecayFit {
        a,
        b,
        c: params[2],
        residual: (current / n as f64).sqrt(),
    })
}

/// `U[i] = Σ_j impact.normalized[i][j]·(ΔL[j] + Lp[j]) / prev_probs[i]`.
pub fn utilities(
    impact: &ImpactMatrix,
    loss_improvements: &[f64],
    potentials: &[f64],
    prev_probs: &[f64],
) -> Result<UtilityVector> {
    let m = impact.tasks();
    if loss_improvements.len() != m || potentials.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: loss_improvements.len().min(potentials.len()),
        });
    }
    if prev_probs.len() != impact.domains() {
        return Err(Error::DimensionMismatch {
            expected: impact.domains(),
            found: prev_probs.len(),
        });
    }
    if let Some(p) = prev_probs.iter().find(|&&p| p.is_nan() || p <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "previous probability {p} must be positive"
        )));
    }
    let values = impact
        .normalized
        .iter()
        .zip(prev_probs)
        .map(|(row, p)| {
            row.iter()
                .zip(loss_improvements.iter().zip(potentials))
                .map(|(s, (dl, lp))| s * (dl + lp))
                .sum::<f64>()
                / p
        })
        .collect();
    Ok(UtilityVector { values })
}

/// `β·p_old + (1 − β)·target`, before any flooring.
pub fn ema_mix(p_old: &[f64], target: &[f64], beta: f64) -> Vec<f64> {
    p_old
        .iter()
        .zip(target)
        .map(|(o, t)| beta * o + (1.0 - beta) * t)
        .collect()
}

/// Euclidean-free projection used after the EMA: entries below `floor` are
/// raised to it and the remaining mass is rescaled, repeating until no entry
/// falls under the floor.
pub fn project_with_floor(p: &[f64], floor: f64) -> Vec<f64> {
    let k = p.len();
    let total: f64 = p.iter().sum();
    let mut out: Vec<f64> = p.iter().map(|v| v / total).collect();
    if floor <= 0.0 {
        return out;
    }
    let mut pinned = vec![false; k];
    loop {
        let mut changed = false;
        for i in 0..k {
            if !pinned[i] && out[i] < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        let n_pinned = pinned.iter().filter(|&&x| x).count();
        let free_mass: f64 = (0..k).filter(|&i| !pinned[i]).map(|i| out[i]).sum();
        let budget = 1.0 - floor * n_pinned as f64;
        for i in 0..k {
            if pinned[i] {
                out[i] = floor;
            } else if free_mass > 0.0 {
                out[i] *= budget / free_mass;
            }
        }
        if !changed {
            break;
        }
    }
    out
}

/// Softmax target, EMA with the current probabilities, floor, renormalize.
pub fn update_probs(state: &SamplingState, u: &UtilityVector, temperature: f64) -> Result<SamplingState> {
    if u.values.len() != state.k {
        return Err(Error::DimensionMismatch {
            expected: state.k,
            found: u.values.len(),
        });
    }
    if u.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("utility vector"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let scaled: Vec<f64> = u.values.iter().map(|v| v / temperature).collect();
    let target = softmax(&scaled);
    let mixed = ema_mix(&state.probs, &target, state.beta);
    Ok(SamplingState {
        k: state.k,
        probs: project_with_floor(&mixed, state.floor),
        prev_probs: state.probs.clone(),
        beta: state.beta,
        update_count: state.update_count + 1,
        tau: state.tau,
        floor: state.floor,
    })
}

/// Which loss-trajectory terms enter the utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerms {
    /// `ΔL + Lp`.
    #[default]
    Full,
    /// `ΔL` only (no decay-curve potential).
    ImprovementOnly,
    /// Constant 1: impact scores alone drive the update.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    pub temperature: f64,
    pub fit_min_points: usize,
    /// Horizon of the decay-curve prediction, in steps.
    pub prediction_window: u64,
    pub loss_terms: LossTerms,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            fit_min_points: DEFAULT_FIT_MIN_POINTS,
            prediction_window: DEFAULT_TAU,
            loss_terms: LossTerms::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub state: SamplingState,
    pub utilities: UtilityVector,
    pub improvements: Vec<f64>,
    pub potentials: Vec<f64>,
    pub fits: Vec<Option<DecayFit>>,
}

/// One full re-weighting step from an impact matrix and per-task histories
/// (one history per impact column, in column order).
pub fn scheduled_update(
    state: &SamplingState,
    impact: &ImpactMatrix,
    histories: &[LossHistory],
    cfg: &UpdateConfig,
) -> Result<UpdateOutcome> {
    if histories.len() != impact.tasks() {
        return Err(Error::DimensionMismatch {
            expected: impact.tasks(),
            found: histories.len(),
        });
    }
    let mut improvements = Vec::with_capacity(histories.len());
    let mut potentials = Vec::with_capacity(histories.len());
    let mut fits = Vec::with_capacity(histories.len());
    for h in histories {
        let (dl, lp, fit) = match cfg.loss_terms {
            LossTerms::None => (1.0, 0.0, None),
            terms => {
                let dl = if h.len() >= 2 { loss_improvement(h)? } else { 0.0 };
                let (lp, fit) = if terms == LossTerms::Full && h.len() >= cfg.fit_min_points.max(3) {
                    let fit = fit_decay(h)?;
                    let last = h.points.last().expect("non-empty");
                    (potential(&fit, last.step, cfg.prediction_window, last.loss), Some(fit))
                } else {
                    (0.0, None)
                };
                (dl, lp, fit)
            }
        };
        improvements.push(dl);
        potentials.push(lp);
        fits.push(fit);
    }
    let u = utilities(impact, &improvements, &potentials, &state.probs)?;
    let next = update_probs(state, &u, cfg.temperature)?;
    Ok(UpdateOutcome {
        state: next,
        utilities: u,
        improvements,
        potentials,
        fits,
    })
}

/// Appends `update_index,step,domain,prob,utility` rows.
pub struct ScheduleLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> ScheduleLog<W> {
    pub fn new(sink: W, write_header: bool) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        if write_header {
            writer.write_record(["update_index", "step", "domain", "prob", "utility"])?;
        }
        Ok(Self { writer })
    }

    pub fn record(&mut self, step: u64, state: &SamplingState, u: &UtilityVector) -> Result<()> {
        for (d, (p, v)) in state.probs.iter().zip(&u.values).enumerate() {
            self.writer.write_record([
                state.update_count.to_string(),
                step.to_string(),
                d.to_string(),
                p.to_string(),
                v.to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}
