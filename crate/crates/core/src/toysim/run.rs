//! Strategy runner and cross-seed comparison.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{CorpusConfig, SyntheticCorpus};
use super::model::{accuracy, forward_loss, loss_and_grad, per_sample_slice_grads, sgd_step, Sample, ToyModel};
use crate::cluster::repartition;
use crate::error::{Error, Result};
use crate::gradtrace::{GradientTrace, LossHistory, TraceRecord};
use crate::impact::{
    build_impact_matrix_with, estimate_fim_diagonal, DomainGradient, FimDiagonal, ImpactDirection,
    ImpactMetric, TaskGradient, DEFAULT_DOMAIN_DECAY, DEFAULT_FIM_BATCH,
};
use crate::numeric::{mean, std_dev};
use crate::scheduler::{default_floor, scheduled_update, LossTerms, SamplingState, UpdateConfig};
use crate::sketch::make_projection;

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Dids,
    /// Gradient-alignment impact with no loss-trajectory terms.
    Dga,
    /// Equal probability per domain.
    Uniform,
    /// Probability proportional to domain size (i.i.d. draws from the pool).
    Random,
    Static(Vec<f64>),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dids => "dids",
            Strategy::Dga => "dga",
            Strategy::Uniform => "uniform",
            Strategy::Random => "random",
            Strategy::Static(_) => "static",
        }
    }

    fn adaptive(&self) -> bool {
        matches!(self, Strategy::Dids | Strategy::Dga)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Static(p) => {
                let parts: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                write!(f, "static:{}", parts.join("/"))
            }
            s => f.write_str(s.name()),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `dids`, `dga`, `uniform`, `random`, or `static:p0/p1/...`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dids" => Ok(Strategy::Dids),
            "dga" => Ok(Strategy::Dga),
            "uniform" => Ok(Strategy::Uniform),
            "random" => Ok(Strategy::Random),
            other => {
                let probs = other
                    .strip_prefix("static:")
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy '{other}'")))?;
                probs
                    .split('/')
                    .map(|p| {
                        p.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad static probability '{p}'")))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Strategy::Static)
            }
        }
    }
}

/// Where the scheduler's domains come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DomainSource {
    /// One domain per corpus generator.
    Generator,
    /// Cluster sketched per-sample gradients of a briefly trained proxy model.
    Repartition {
        k: usize,
        proj_dim: usize,
        keep_ratio: f64,
        proxy_hidden: usize,
        proxy_steps: u64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub budget: u64,
    /// Number of scheduler updates; the period is `ceil(budget / updates)`.
    pub updates: u64,
    pub beta: f64,
    pub temperature: f64,
    /// Probability floor; `None` means `1e-4 / k`.
    pub floor: Option<f64>,
    pub domain_decay: f64,
    pub fim_batch: usize,
    /// Steps between task-loss evaluations. The loss history, and so the
    /// improvement and decay-curve terms, use this cadence independent of the
    /// update period.
    pub eval_interval: u64,
    /// Fresh samples per domain folded into the running gradient at each update.
    pub probe_batch: usize,
    pub slice_fraction: f64,
    pub direction: ImpactDirection,
    pub fit_min_points: usize,
    /// Decay-curve horizon; `None` reuses the update period.
    pub prediction_window: Option<u64>,
    pub loss_terms: LossTerms,
    pub domains: DomainSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            batch_size: 32,
            lr: 0.1,
            budget: 5000,
            updates: 25,
            beta: 0.1,
            temperature: 1.0,
            floor: None,
            domain_decay: DEFAULT_DOMAIN_DECAY,
            fim_batch: DEFAULT_FIM_BATCH,
            probe_batch: 32,
            eval_interval: 100,
            slice_fraction: super::model::DEFAULT_SLICE_FRACTION,
            direction: ImpactDirection::Aligned,
            fit_min_points: 3,
            prediction_window: None,
            loss_terms: LossTerms::Full,
            domains: DomainSource::Generator,
        }
    }
}

impl RunConfig {
    /// Settings for the planted-alignment corpus. The temperature is lowered
    /// from 1.0 because loss improvements between evaluations are a few
    /// hundredths; at 1.0 the softmax target stays close to uniform.
    pub fn planted() -> Self {
        Self {
            temperature: 0.1,
            ..Self::default()
        }
    }

    pub fn tau(&self) -> u64 {
        self.budget.div_ceil(self.updates.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.hidden == 0 || self.batch_size == 0 || self.fim_batch == 0 || self.probe_batch == 0 {
            return bad("hidden, batch_size, fim_batch and probe_batch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.budget == 0 || self.updates == 0 || self.eval_interval == 0 {
            return bad("budget, updates and eval_interval must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.domain_decay > 0.0 && self.domain_decay <= 1.0) {
            return bad("domain_decay must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    pub corpus_seed: u64,
    pub k: usize,
    pub budget: u64,
    pub tau: u64,
    pub domain_labels: Vec<String>,
    /// Mini-batch training loss at every step.
    pub train_losses: Vec<f64>,
    /// Steps at which task losses were recorded (0, every evaluation and every update).
    pub task_loss_steps: Vec<u64>,
    /// Observation-set loss per recorded step, one entry per task.
    pub task_losses: Vec<Vec<f64>>,
    pub update_steps: Vec<u64>,
    /// Probabilities after each update, one row per update.
    pub trajectory: Vec<Vec<f64>>,
    pub utilities: Vec<Vec<f64>>,
    /// Normalized impact matrix (domain × task) at each update; empty rows for
    /// non-adaptive strategies.
    pub impact_scores: Vec<Vec<Vec<f64>>>,
    pub final_task_loss: Vec<f64>,
    pub final_task_accuracy: Vec<f64>,
    pub config: RunConfig,
    pub corpus: CorpusConfig,
}

impl RunReport {
    pub fn mean_final_task_loss(&self) -> f64 {
        mean(&self.final_task_loss)
    }

    pub fn mean_final_accuracy(&self) -> f64 {
        mean(&self.final_task_accuracy)
    }

    pub fn final_probs(&self) -> Option<&[f64]> {
        self.trajectory.last().map(Vec::as_slice)
    }

    pub fn write_json<W: Write>(&self, sink: W) -> Result<()> {
        serde_json::to_writer_pretty(sink, self)?;
        Ok(())
    }

    /// `update_index,step,domain,prob` rows.
    pub fn write_trajectory_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["update_index", "step", "domain", "prob"])?;
        for (u, (row, step)) in self.trajectory.iter().zip(&self.update_steps).enumerate() {
            for (d, p) in row.iter().enumerate() {
                w.write_record([(u + 1).to_string(), step.to_string(), d.to_string(), p.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-sample slice gradients of `model` over the corpus as a trace; the
/// sample id is the pool index and the hint is the generator index.
pub fn gradient_trace(model: &ToyModel, corpus: &SyntheticCorpus) -> Result<GradientTrace> {
    let grads = per_sample_slice_grads(model, &corpus.samples)?;
    let mut trace = GradientTrace::new(model.slice_len(), "toysim");
    for (i, (g, s)) in grads.into_iter().zip(&corpus.samples).enumerate() {
        let id = u32::try_from(i).map_err(|_| Error::InvalidArgument("corpus too large".into()))?;
        let hint = i32::try_from(s.domain).unwrap_or(-1);
        trace.push(TraceRecord::new(id, hint, g.into_iter().map(|v| v as f32).collect()));
    }
    Ok(trace)
}

fn resolve_domains(corpus: &SyntheticCorpus, cfg: &RunConfig) -> Result<Vec<Vec<usize>>> {
    match &cfg.domains {
        DomainSource::Generator => Ok(corpus.generator_domains()),
        DomainSource::Repartition { k, proj_dim, keep_ratio, proxy_hidden, proxy_steps, seed } => {
            let mut rng = stream_rng(*seed, 2);
            let mut proxy = ToyModel::init(corpus.config.n_in, *proxy_hidden, corpus.config.n_c, &mut rng)?;
            proxy.set_slice_fraction(cfg.slice_fraction)?;
            for _ in 0..*proxy_steps {
                let batch: Vec<&Sample> = (0..cfg.batch_size)
                    .map(|_| &corpus.samples[rng.random_range(0..corpus.samples.len())])
                    .collect();
                let (_, g) = loss_and_grad(&proxy, &batch)?;
                proxy = sgd_step(&proxy, &g, cfg.lr)?;
            }
            let trace = gradient_trace(&proxy, corpus)?;
            // a sketch wider than the slice adds nothing
            let proj = make_projection(trace.dim, (*proj_dim).min(trace.dim), *seed)?;
            let part = repartition(&trace, *keep_ratio, &proj, *k, *seed)?;
            Ok(part.members().into_iter().map(|m| m.into_iter().map(|id| id as usize).collect()).collect())
        }
    }
}

fn mean_slice_grad(model: &ToyModel, batch: &[&Sample]) -> Result<Vec<f64>> {
    let (_, g) = loss_and_grad(model, batch)?;
    Ok(g[model.slice_start..].to_vec())
}

fn initial_probs(strategy: &Strategy, domains: &[Vec<usize>]) -> Result<Vec<f64>> {
    let k = domains.len();
    match strategy {
        Strategy::Dids | Strategy::Dga | Strategy::Uniform => Ok(vec![1.0 / k as f64; k]),
        Strategy::Random => {
            let total: usize = domains.iter().map(Vec::len).sum();
            Ok(domains.iter().map(|d| d.len() as f64 / total as f64).collect())
        }
        Strategy::Static(p) => {
            if p.len() != k {
                return Err(Error::DimensionMismatch { expected: k, found: p.len() });
            }
            let total: f64 = p.iter().sum();
            if p.iter().any(|v| v.is_nan() || *v < 0.0) || total.is_nan() || total <= 0.0 {
                return Err(Error::InvalidArgument("static probabilities must be non-negative".into()));
            }
            Ok(p.iter().map(|v| v / total).collect())
        }
    }
}

/// Trains a fresh model for `cfg.budget` steps under `strategy`.
///
/// Model initialisation, batch sampling and scheduler probes use separate
/// streams of `seed`, so strategies compared at the same seed start from the
/// same weights.
pub fn run_strategy(
    corpus: &SyntheticCorpus,
    strategy: &Strategy,
    seed: u64,
    cfg: &RunConfig,
) -> Result<RunReport> {
    cfg.validate()?;
    let domains = resolve_domains(corpus, cfg)?;
    if let Some(i) = domains.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!("domain {i} has no samples")));
    }
    let k = domains.len();
    let m = corpus.tasks.len();
    let tau = cfg.tau();
    let floor = cfg.floor.unwrap_or_else(|| default_floor(k));
    let probs = initial_probs(strategy, &domains)?;
    let mut state = SamplingState::with_probs(probs, cfg.beta, tau, floor)?;

    let mut init_rng = stream_rng(seed, 0);
    let mut rng = stream_rng(seed, 1);
    let mut probe_rng = stream_rng(seed, 3);
    let mut model = ToyModel::init(corpus.config.n_in, cfg.hidden, corpus.config.n_c, &mut init_rng)?;
    model.set_slice_fraction(cfg.slice_fraction)?;
    let d = model.slice_len();

    let metric = match strategy {
        Strategy::Dga => ImpactMetric::DgaAlignment,
        _ => ImpactMetric::FimKl,
    };
    let update_cfg = UpdateConfig {
        temperature: cfg.temperature,
        fit_min_points: cfg.fit_min_points,
        prediction_window: cfg.prediction_window.unwrap_or(tau),
        loss_terms: if *strategy == Strategy::Dga { LossTerms::None } else { cfg.loss_terms },
    };

    let mut domain_grads: Vec<DomainGradient> =
        (0..k).map(|i| DomainGradient::new(i, d, cfg.domain_decay)).collect();
    let mut histories: Vec<LossHistory> = (0..m).map(|t| LossHistory::new(t as u32)).collect();
    let mut report = RunReport {
        strategy: strategy.to_string(),
        seed,
        corpus_seed: corpus.seed,
        k,
        budget: cfg.budget,
        tau,
        domain_labels: match cfg.domains {
            DomainSource::Generator => corpus.domain_labels(),
            _ => (0..k).map(|i| format!("cluster:{i}")).collect(),
        },
        train_losses: Vec::with_capacity(cfg.budget as usize),
        task_loss_steps: Vec::new(),
        task_losses: Vec::new(),
        update_steps: Vec::new(),
        trajectory: Vec::new(),
        utilities: Vec::new(),
        impact_scores: Vec::new(),
        final_task_loss: Vec::new(),
        final_task_accuracy: Vec::new(),
        config: cfg.clone(),
        corpus: corpus.config.clone(),
    };

    let record_task_losses = |model: &ToyModel, step: u64, histories: &mut [LossHistory], report: &mut RunReport| -> Result<()> {
        let losses = corpus
            .tasks
            .iter()
            .map(|t| forward_loss(model, &t.observe))
            .collect::<Result<Vec<f64>>>()?;
        for (h, l) in histories.iter_mut().zip(&losses) {
            h.push(step, *l)?;
        }
        report.task_loss_steps.push(step);
        report.task_losses.push(losses);
        Ok(())
    };
    record_task_losses(&model, 0, &mut histories, &mut report)?;

    // step t trains on the t-th batch; an update at t happens just before it
    for step in 1..=cfg.budget {
        let is_update = step % tau == 0;
        if is_update || step % cfg.eval_interval == 0 {
            record_task_losses(&model, step, &mut histories, &mut report)?;
        }
        if is_update {
            let mut utilities = vec![0.0; k];
            let mut scores = Vec::new();
            if strategy.adaptive() {
                for (i, members) in domains.iter().enumerate() {
                    let probe: Vec<&Sample> = (0..cfg.probe_batch)
                        .map(|_| &corpus.samples[members[probe_rng.random_range(0..members.len())]])
                        .collect();
                    domain_grads[i].update(&mean_slice_grad(&model, &probe)?, probe.len() as f64)?;
                }
                let mut task_grads = Vec::with_capacity(m);
                let mut fims = Vec::with_capacity(m);
                for task in &corpus.tasks {
                    let all: Vec<&Sample> = task.observe.iter().collect();
                    task_grads.push(TaskGradient::new(task.task, mean_slice_grad(&model, &all)?, all.len()));
                    fims.push(if metric == ImpactMetric::FimKl {
                        let n = cfg.fim_batch.min(all.len());
                        let picked: Vec<&Sample> = sample_indices(&mut probe_rng, all.len(), n)
                            .into_iter()
                            .map(|i| all[i])
                            .collect();
                        estimate_fim_diagonal(&per_sample_slice_grads(&model, &picked)?)?
                    } else {
                        FimDiagonal::identity(d)
                    });
                }
                let impact = build_impact_matrix_with(&domain_grads, &task_grads, &fims, metric, cfg.direction)?;
                let out = scheduled_update(&state, &impact, &histories, &update_cfg)?;
                state = out.state;
                utilities = out.utilities.values;
                scores = impact.normalized;
            }
            report.update_steps.push(step);
            report.trajectory.push(state.probs.clone());
            report.utilities.push(utilities);
            report.impact_scores.push(scores);
        }
        let picker = WeightedIndex::new(&state.probs)
            .map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))?;
        let mut by_domain: Vec<Vec<&Sample>> = vec![Vec::new(); k];
        for _ in 0..cfg.batch_size {
            let dom = picker.sample(&mut rng);
            let members = &domains[dom];
            by_domain[dom].push(&corpus.samples[members[rng.random_range(0..members.len())]]);
        }
        let mut grad = vec![0.0; model.param_count()];
        let mut loss = 0.0;
        let b = cfg.batch_size as f64;
        for (dom, group) in by_domain.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let (l, g) = loss_and_grad(&model, group)?;
            let w = group.len() as f64 / b;
            loss += w * l;
            grad.iter_mut().zip(&g).for_each(|(acc, v)| *acc += w * v);
            if strategy.adaptive() {
                domain_grads[dom].update(&g[model.slice_start..], group.len() as f64)?;
            }
        }
        report.train_losses.push(loss);
        model = sgd_step(&model, &grad, cfg.lr)?;
    }

    for task in &corpus.tasks {
        report.final_task_loss.push(forward_loss(&model, &task.test)?);
        report.final_task_accuracy.push(accuracy(&model, &task.test)?);
    }
    Ok(report)
}

/// Runs independent seeds in parallel; output order follows `seeds`.
pub fn run_seeds(
    corpus: &SyntheticCorpus,
    strategy: &Strategy,
    seeds: &[u64],
    cfg: &RunConfig,
) -> Result<Vec<RunReport>> {
    seeds.par_iter().map(|&s| run_strategy(corpus, strategy, s, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub seeds: Vec<u64>,
    pub final_losses: Vec<f64>,
    pub mean_task_loss: f64,
    pub std_task_loss: f64,
    pub mean_accuracy: f64,
    /// Seeds where this strategy's loss is below the baseline's at the same seed.
    pub paired_wins: usize,
    pub paired_n: usize,
    pub beats_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Option<String>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, strategy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "strategy",
            "runs",
            "mean_task_loss",
            "std_task_loss",
            "mean_accuracy",
            "paired_wins",
            "paired_n",
            "beats_baseline",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.strategy.clone(),
                r.seeds.len().to_string(),
                r.mean_task_loss.to_string(),
                r.std_task_loss.to_string(),
                r.mean_accuracy.to_string(),
                r.paired_wins.to_string(),
                r.paired_n.to_string(),
                r.beats_baseline.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean ± standard deviation of final task loss per strategy, with paired
/// wins against `uniform` when it is present.
pub fn compare_strategies(reports: &[RunReport]) -> Result<Comparison> {
    let first = reports.first().ok_or(Error::Empty("reports"))?;
    for r in reports {
        if r.budget != first.budget || r.corpus_seed != first.corpus_seed || r.corpus != first.corpus {
            return Err(Error::InvalidArgument(format!(
                "report '{}' seed {} was run on a different corpus or budget",
                r.strategy, r.seed
            )));
        }
    }
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        if !names.contains(&r.strategy.as_str()) {
            names.push(&r.strategy);
        }
    }
    let baseline = names.iter().find(|n| **n == "uniform").map(|n| n.to_string());
    let finals = |name: &str| -> Vec<(u64, f64, f64)> {
        reports
            .iter()
            .filter(|r| r.strategy == name)
            .map(|r| (r.seed, r.mean_final_task_loss(), r.mean_final_accuracy()))
            .collect()
    };
    let base = baseline.as_deref().map(finals).unwrap_or_default();
    let base_mean = mean(&base.iter().map(|b| b.1).collect::<Vec<_>>());

    let rows = names
        .iter()
        .map(|name| {
            let runs = finals(name);
            let losses: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let accs: Vec<f64> = runs.iter().map(|r| r.2).collect();
            let mut wins = 0;
            let mut paired = 0;
            for (seed, loss, _) in &runs {
                if let Some(b) = base.iter().find(|b| b.0 == *seed) {
                    paired += 1;
                    wins += usize::from(*loss < b.1);
                }
            }
            let mean_loss = mean(&losses);
            ComparisonRow {
                strategy: name.to_string(),
                seeds: runs.iter().map(|r| r.0).collect(),
                std_task_loss: if losses.len() > 1 { std_dev(&losses) } else { 0.0 },
                mean_task_loss: mean_loss,
                mean_accuracy: mean(&accs),
                paired_wins: wins,
                paired_n: paired,
                beats_baseline: !base.is_empty() && mean_loss < base_mean,
                final_losses: losses,
            }
        })
        .collect();
    Ok(Comparison { baseline, rows })
}
