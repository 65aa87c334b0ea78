use std::collections::BTreeMap;
use std::path::PathBuf;

use mixsched::cluster::read_partition_csv;
use mixsched::impact::{build_impact_matrix_with, write_impact_csv};
use mixsched::{estimate_fim_diagonal, DomainGradient, Error, GradientTrace, ImpactMatrix, TaskGradient};

use super::load_trace;
use crate::config::EngineConfig;
use crate::error::{CliError, CliResult};
use crate::output::{open_input, write_atomic, write_meta};

pub struct Outcome {
    pub csv: PathBuf,
    pub matrix: ImpactMatrix,
    pub task_ids: Vec<i32>,
}

/// Domain mean gradients come from the training trace grouped by the
/// partition; each task's mean gradient and empirical Fisher diagonal come from
/// the task trace records carrying that task id as their domain hint.
pub fn run(cfg: &EngineConfig) -> CliResult<Outcome> {
    let trace_path = cfg.require(&cfg.trace, "trace")?;
    let part_path = cfg.require(&cfg.partition, "partition")?;
    let task_path = cfg.require(&cfg.task_trace, "task_trace")?;

    let trace = load_trace(trace_path)?;
    let assignments =
        read_partition_csv(open_input(part_path, "partition")?).map_err(|e| CliError::input(part_path, e))?;
    let tasks = load_trace(task_path)?;
    if tasks.dim != trace.dim {
        return Err(CliError::input(
            task_path,
            Error::DimensionMismatch {
                expected: trace.dim,
                found: tasks.dim,
            },
        ));
    }

    let domains = domain_gradients(&trace, &assignments)?;
    let (task_ids, task_grads, fims) = task_gradients(&tasks)?;
    let matrix = build_impact_matrix_with(&domains, &task_grads, &fims, cfg.impact_metric, cfg.impact_direction)?;

    let csv = cfg.out_dir.join("impact.csv");
    write_atomic(&csv, |w| write_impact_csv(&matrix, w))?;
    let sizes: Vec<usize> = (0..domains.len())
        .map(|d| assignments.values().filter(|&&a| a == d).count())
        .collect();
    write_meta(
        &csv,
        "impact",
        cfg,
        serde_json::json!({ "task_ids": task_ids, "domain_sizes": sizes }),
    )?;
    Ok(Outcome { csv, matrix, task_ids })
}

fn domain_gradients(trace: &GradientTrace, assignments: &BTreeMap<u32, usize>) -> CliResult<Vec<DomainGradient>> {
    if assignments.len() != trace.len() {
        return Err(CliError::Validation(format!(
            "partition covers {} samples but the trace has {}",
            assignments.len(),
            trace.len()
        )));
    }
    let k = assignments.values().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; trace.dim]; k];
    let mut counts = vec![0usize; k];
    for r in &trace.records {
        let d = *assignments
            .get(&r.sample_id)
            .ok_or_else(|| CliError::Validation(format!("sample {} is missing from the partition", r.sample_id)))?;
        counts[d] += 1;
        for (s, &v) in sums[d].iter_mut().zip(&r.vector) {
            *s += f64::from(v);
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(CliError::Validation(format!("domain {empty} has no samples")));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(d, (s, n))| DomainGradient::with_mean(d, s.into_iter().map(|v| v / n as f64).collect()))
        .collect())
}

type TaskInputs = (Vec<i32>, Vec<TaskGradient>, Vec<mixsched::FimDiagonal>);

fn task_gradients(tasks: &GradientTrace) -> CliResult<TaskInputs> {
    let mut by_task: BTreeMap<i32, Vec<Vec<f64>>> = BTreeMap::new();
    for r in &tasks.records {
        if r.domain_hint < 0 {
            return Err(CliError::Validation(format!(
                "task sample {} has no task id (domain hint -1)",
                r.sample_id
            )));
        }
        by_task
            .entry(r.domain_hint)
            .or_default()
            .push(r.vector.iter().map(|&v| f64::from(v)).collect());
    }
    if by_task.is_empty() {
        return Err(CliError::Validation("task trace holds no records".into()));
    }
    let mut ids = Vec::new();
    let mut grads = Vec::new();
    let mut fims = Vec::new();
    for (j, (id, samples)) in by_task.into_iter().enumerate() {
        let n = samples.len();
        let mut mean = vec![0.0; tasks.dim];
        for s in &samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n as f64;
            }
        }
        fims.push(estimate_fim_diagonal(&samples)?);
        grads.push(TaskGradient::new(j, mean, n));
        ids.push(id);
    }
    Ok((ids, grads, fims))
}
