use std::path::PathBuf;

use mixsched::cluster::{repartition_with, write_partition_csv, HintMode, PartitionSidecar};
use mixsched::make_projection;

use super::load_trace;
use crate::config::EngineConfig;
use crate::error::{CliError, CliResult};
use crate::output::{write_atomic, write_json};

pub struct Outcome {
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub samples: usize,
    pub k: usize,
    pub inertia: f64,
}

/// Sketches the trace (projection width capped at the trace dim) and clusters
/// it into `k_domains` domains.
pub fn run(cfg: &EngineConfig) -> CliResult<Outcome> {
    let path = cfg.require(&cfg.trace, "trace")?;
    let trace = load_trace(path)?;
    if trace.is_empty() {
        return Err(CliError::Validation(format!("{} holds no records", path.display())));
    }
    let proj_dim = cfg.proj_dim.min(trace.dim);
    let proj = make_projection(trace.dim, proj_dim, cfg.proj_seed)?;
    let part = repartition_with(
        &trace,
        cfg.keep_ratio,
        &proj,
        cfg.k_domains,
        cfg.kmeans_seed,
        cfg.max_iters,
        HintMode::Global,
    )?;

    let csv = cfg.out_dir.join("partition.csv");
    let sidecar = cfg.out_dir.join("partition.json");
    write_atomic(&csv, |w| write_partition_csv(&part, w))?;
    let mut echo = cfg.to_value();
    echo["effective_proj_dim"] = proj_dim.into();
    echo["trace_dim"] = trace.dim.into();
    write_json(&sidecar, &PartitionSidecar::from_partition(&part, Some(echo)))?;
    Ok(Outcome {
        csv,
        sidecar,
        samples: trace.len(),
        k: part.k,
        inertia: part.inertia,
    })
}
