use std::fs;
use std::path::{Path, PathBuf};

use mixsched::impact::read_impact_csv;
use mixsched::scheduler::{scheduled_update, ScheduleLog};
use mixsched::{read_loss_history, DecayFit, LossHistory, SamplingState};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::EngineConfig;
use crate::error::{CliError, CliResult};
use crate::output::{meta_path, open_input, write_atomic, write_json, write_meta};

/// Contents of `state.json`: the new state plus everything that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    pub step: u64,
    pub state: SamplingState,
    pub task_ids: Vec<u32>,
    pub utilities: Vec<f64>,
    pub improvements: Vec<f64>,
    pub potentials: Vec<f64>,
    pub fits: Vec<Option<DecayFit>>,
    pub config: Value,
}

pub struct Outcome {
    pub state_path: PathBuf,
    pub log_path: PathBuf,
    pub record: StateFile,
}

pub fn run(cfg: &EngineConfig) -> CliResult<Outcome> {
    let impact_path = cfg.require(&cfg.impact, "impact")?;
    let loss_path = cfg.require(&cfg.losses, "losses")?;
    let matrix =
        read_impact_csv(open_input(impact_path, "impact CSV")?).map_err(|e| CliError::input(impact_path, e))?;
    let histories =
        read_loss_history(open_input(loss_path, "loss history")?).map_err(|e| CliError::input(loss_path, e))?;

    let task_ids = match impact_task_ids(impact_path)? {
        Some(ids) => ids,
        None => histories.iter().map(|h| h.task_id).collect(),
    };
    if task_ids.len() != matrix.tasks() {
        return Err(CliError::Validation(format!(
            "impact matrix has {} task columns but {} tasks are known",
            matrix.tasks(),
            task_ids.len()
        )));
    }
    let ordered: Vec<LossHistory> = task_ids
        .iter()
        .map(|id| {
            histories
                .iter()
                .find(|h| h.task_id == *id)
                .cloned()
                .ok_or_else(|| CliError::Validation(format!("no loss history for task {id}")))
        })
        .collect::<CliResult<_>>()?;

    let k = matrix.domains();
    let state = match &cfg.state {
        Some(p) => read_state(p)?,
        None => SamplingState::new(k, cfg.beta, cfg.tau, cfg.floor_for(k))?,
    };
    if state.k != k {
        return Err(CliError::Validation(format!(
            "state has {} domains, impact matrix has {k}",
            state.k
        )));
    }
    let out = scheduled_update(&state, &matrix, &ordered, &cfg.update_config())?;
    let step = ordered
        .iter()
        .filter_map(|h| h.points.last().map(|p| p.step))
        .max()
        .unwrap_or(0);

    let record = StateFile {
        step,
        state: out.state.clone(),
        task_ids,
        utilities: out.utilities.values.clone(),
        improvements: out.improvements,
        potentials: out.potentials,
        fits: out.fits,
        config: cfg.to_value(),
    };
    let state_path = cfg.out_dir.join("state.json");
    write_json(&state_path, &record)?;

    let log_path = cfg.out_dir.join("schedule.csv");
    let previous = match fs::read(&log_path) {
        Ok(bytes) => Some(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(CliError::io(&log_path, e)),
    };
    write_atomic(&log_path, |w| {
        use std::io::Write;
        if let Some(bytes) = &previous {
            w.write_all(bytes)?;
        }
        let mut log = ScheduleLog::new(w, previous.is_none())?;
        log.record(step, &out.state, &out.utilities)?;
        log.finish()
    })?;
    write_meta(&log_path, "schedule", cfg, Value::Null)?;
    Ok(Outcome {
        state_path,
        log_path,
        record,
    })
}

fn impact_task_ids(impact_path: &Path) -> CliResult<Option<Vec<u32>>> {
    let meta = meta_path(impact_path);
    let text = match fs::read_to_string(&meta) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CliError::io(&meta, e)),
    };
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::input(&meta, e))?;
    match v.get("task_ids") {
        Some(ids) => serde_json::from_value(ids.clone())
            .map(Some)
            .map_err(|e| CliError::input(&meta, e)),
        None => Ok(None),
    }
}

/// Accepts either a previous `state.json` or a bare serialized state.
fn read_state(path: &Path) -> CliResult<SamplingState> {
    let v: Value = serde_json::from_reader(open_input(path, "state")?).map_err(|e| CliError::input(path, e))?;
    let inner = v.get("state").cloned().unwrap_or(v);
    let s: SamplingState = serde_json::from_value(inner).map_err(|e| CliError::input(path, e))?;
    // re-validate rather than trust the file
    let mut checked = SamplingState::with_probs(s.probs.clone(), s.beta, s.tau, s.floor)?;
    checked.prev_probs = s.prev_probs;
    checked.update_count = s.update_count;
    Ok(checked)
}
