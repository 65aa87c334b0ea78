use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mixsched::toysim::{CorpusConfig, DomainKind};

use super::simulate::ReportFile;
use crate::config::EngineConfig;
use crate::error::{CliError, CliResult};
use crate::output::{open_input, write_atomic, write_meta};

pub struct Outcome {
    pub reports: usize,
    pub trajectory: PathBuf,
    pub by_updates: PathBuf,
    pub by_noise: PathBuf,
}

struct Loaded {
    path: PathBuf,
    file: ReportFile,
    noise: String,
}

/// Share of the training pool drawn from noise domains, as a fixed-width key.
fn noise_ratio(c: &CorpusConfig) -> String {
    let total: usize = c.domains.iter().map(|d| d.size).sum();
    let noise: usize = c
        .domains
        .iter()
        .filter(|d| matches!(d.kind, DomainKind::Noise { .. }))
        .map(|d| d.size)
        .sum();
    format!("{:.4}", noise as f64 / total.max(1) as f64)
}

fn collect_inputs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(CliError::NotFound {
                what: "report input",
                path: p.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation("no report files found".into()));
    }
    Ok(out)
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(dir, err)))
        .collect::<CliResult<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            if name.ends_with(".json") && !name.ends_with(".meta.json") {
                out.push(p);
            }
        }
    }
    Ok(())
}

struct Group {
    tau: u64,
    losses: Vec<f64>,
    accuracies: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Writes `trajectory.csv` (probability per update), `score_vs_updates.csv`
/// (one row per noise ratio, update count and strategy) and
/// `score_vs_noise.csv` (the same aggregates ordered by noise ratio, with
/// degradation against the lowest noise ratio of each family). Reports
/// sharing a noise ratio must agree on the number of domains.
pub fn run(cfg: &EngineConfig, inputs: &[PathBuf]) -> CliResult<Outcome> {
    let files = collect_inputs(inputs)?;
    let mut loaded = Vec::with_capacity(files.len());
    for path in files {
        let file: ReportFile = serde_json::from_reader(open_input(&path, "report")?)
            .map_err(|e| CliError::input(&path, e))?;
        let noise = noise_ratio(&file.report.corpus);
        loaded.push(Loaded { path, file, noise });
    }

    let mut k_by_noise: BTreeMap<&str, (usize, &Path)> = BTreeMap::new();
    for l in &loaded {
        let (k, first) = *k_by_noise.entry(&l.noise).or_insert((l.file.report.k, &l.path));
        if k != l.file.report.k {
            return Err(CliError::Validation(format!(
                "reports are not mergeable: {} has {k} domains but {} has {} (noise ratio {})",
                first.display(),
                l.path.display(),
                l.file.report.k,
                l.noise
            )));
        }
    }

    let trajectory = cfg.out_dir.join("trajectory.csv");
    write_atomic(&trajectory, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["noise_ratio", "updates", "strategy", "seed", "update_index", "step", "domain", "prob"])?;
        for l in &loaded {
            let r = &l.file.report;
            for (u, probs) in r.trajectory.iter().enumerate() {
                let step = r.update_steps.get(u).copied().unwrap_or(0);
                for (d, p) in probs.iter().enumerate() {
                    csv.write_record([
                        l.noise.clone(),
                        r.config.updates.to_string(),
                        r.strategy.clone(),
                        r.seed.to_string(),
                        u.to_string(),
                        step.to_string(),
                        d.to_string(),
                        p.to_string(),
                    ])?;
                }
            }
        }
        csv.flush()?;
        Ok(())
    })?;

    let mut groups: BTreeMap<(String, u64, String), Group> = BTreeMap::new();
    for l in &loaded {
        let r = &l.file.report;
        let g = groups
            .entry((l.noise.clone(), r.config.updates, r.strategy.clone()))
            .or_insert(Group {
                tau: r.tau,
                losses: Vec::new(),
                accuracies: Vec::new(),
            });
        g.losses.push(r.mean_final_task_loss());
        g.accuracies.push(r.mean_final_accuracy());
    }

    let by_updates = cfg.out_dir.join("score_vs_updates.csv");
    write_atomic(&by_updates, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "noise_ratio",
            "updates",
            "tau",
            "strategy",
            "runs",
            "mean_task_loss",
            "std_task_loss",
            "mean_accuracy",
        ])?;
        for ((noise, updates, strategy), g) in &groups {
            csv.write_record([
                noise.clone(),
                updates.to_string(),
                g.tau.to_string(),
                strategy.clone(),
                g.losses.len().to_string(),
                mean(&g.losses).to_string(),
                std_dev(&g.losses).to_string(),
                mean(&g.accuracies).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;

    let mut by_family: BTreeMap<(u64, &str), Vec<(&str, &Group)>> = BTreeMap::new();
    for ((noise, updates, strategy), g) in &groups {
        by_family.entry((*updates, strategy)).or_default().push((noise, g));
    }
    let by_noise = cfg.out_dir.join("score_vs_noise.csv");
    write_atomic(&by_noise, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "updates",
            "strategy",
            "noise_ratio",
            "runs",
            "mean_task_loss",
            "std_task_loss",
            "degradation",
        ])?;
        for ((updates, strategy), rows) in &by_family {
            // noise keys are fixed-width, so the first row is the cleanest
            let base = mean(&rows[0].1.losses);
            for (noise, g) in rows {
                let m = mean(&g.losses);
                csv.write_record([
                    updates.to_string(),
                    strategy.to_string(),
                    noise.to_string(),
                    g.losses.len().to_string(),
                    m.to_string(),
                    std_dev(&g.losses).to_string(),
                    (m - base).to_string(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;

    let sources: Vec<serde_json::Value> = loaded
        .iter()
        .map(|l| {
            serde_json::json!({
                "path": l.path.to_string_lossy(),
                "engine_config": l.file.engine_config,
            })
        })
        .collect();
    let extra = serde_json::json!({ "inputs": sources });
    for p in [&trajectory, &by_updates, &by_noise] {
        write_meta(p, "report", cfg, extra.clone())?;
    }
    Ok(Outcome {
        reports: loaded.len(),
        trajectory,
        by_updates,
        by_noise,
    })
}
