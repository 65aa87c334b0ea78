//! Engine configuration: built-in defaults, named presets, a flat JSON file,
//! then command-line overrides, in increasing precedence.

use std::fs;
use std::path::{Path, PathBuf};

use mixsched::scheduler::{default_floor, LossTerms, UpdateConfig};
use mixsched::toysim::{CorpusConfig, RunConfig, Strategy, PLANTED_CORPUS_SEED};
use mixsched::{ImpactDirection, ImpactMetric};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const PRESETS: [&str; 2] = ["desk-small", "desk-medium"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub preset: Option<String>,

    pub keep_ratio: f64,
    pub proj_dim: usize,
    pub proj_seed: u64,
    pub k_domains: usize,
    pub kmeans_seed: u64,
    pub max_iters: usize,

    pub impact_metric: ImpactMetric,
    pub impact_direction: ImpactDirection,

    pub beta: f64,
    pub tau: u64,
    pub temperature: f64,
    /// `None` means `1e-4 / k`.
    pub floor: Option<f64>,
    pub fit_min_points: usize,
    pub loss_terms: LossTerms,

    pub budget: u64,
    pub seeds: Vec<u64>,
    pub strategies: Vec<String>,
    pub corpus_seed: u64,
    /// Replace the corpus noise domains with this share of the pool.
    pub noise_fraction: Option<f64>,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub eval_interval: u64,

    pub trace: Option<PathBuf>,
    pub task_trace: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub impact: Option<PathBuf>,
    pub losses: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            preset: None,
            keep_ratio: mixsched::sketch::DEFAULT_KEEP_RATIO,
            proj_dim: mixsched::sketch::DEFAULT_PROJ_DIM,
            proj_seed: 0,
            k_domains: mixsched::cluster::DEFAULT_K,
            kmeans_seed: 0,
            max_iters: mixsched::cluster::DEFAULT_MAX_ITERS,
            impact_metric: ImpactMetric::FimKl,
            impact_direction: ImpactDirection::Aligned,
            beta: mixsched::scheduler::DEFAULT_BETA,
            tau: mixsched::scheduler::DEFAULT_TAU,
            temperature: mixsched::scheduler::DEFAULT_TEMPERATURE,
            floor: None,
            fit_min_points: mixsched::scheduler::DEFAULT_FIT_MIN_POINTS,
            loss_terms: LossTerms::Full,
            budget: run.budget,
            seeds: vec![1, 2, 3, 4, 5],
            strategies: vec!["dids".into(), "uniform".into()],
            corpus_seed: PLANTED_CORPUS_SEED,
            noise_fraction: None,
            hidden: run.hidden,
            lr: run.lr,
            batch_size: run.batch_size,
            eval_interval: run.eval_interval,
            trace: None,
            task_trace: None,
            partition: None,
            impact: None,
            losses: None,
            state: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Keys a preset sets on top of the defaults.
fn preset_values(name: &str) -> CliResult<Value> {
    let v = match name {
        "desk-small" => serde_json::json!({
            "proj_dim": 64,
            "k_domains": 8,
            "tau": 100,
            "temperature": 0.1,
            "budget": 1000,
            "seeds": [1, 2, 3],
            "hidden": 8,
            "eval_interval": 50,
        }),
        "desk-medium" => serde_json::json!({
            "proj_dim": 256,
            "k_domains": 16,
            "tau": 200,
            "temperature": 0.1,
            "budget": 5000,
            "seeds": [1, 2, 3, 4, 5],
        }),
        other => {
            return Err(CliError::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(v)
}

/// Sources of configuration in the order they are applied.
#[derive(Debug, Default)]
pub struct ConfigSources<'a> {
    pub file: Option<&'a Path>,
    pub preset: Option<&'a str>,
    /// `key=value` pairs; values are parsed as JSON, falling back to strings.
    pub sets: &'a [String],
    /// Typed values from dedicated flags, applied last.
    pub flags: &'a [(String, Value)],
}

pub fn resolve(src: &ConfigSources<'_>) -> CliResult<EngineConfig> {
    let file_map = match src.file {
        Some(path) => read_config_file(path)?,
        None => Map::new(),
    };
    let preset = match src.preset {
        Some(p) => Some(p.to_string()),
        None => match file_map.get("preset") {
            Some(Value::String(p)) => Some(p.clone()),
            Some(Value::Null) | None => None,
            Some(other) => return Err(CliError::Config(format!("preset must be a string, found {other}"))),
        },
    };

    let mut merged = match serde_json::to_value(EngineConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => return Err(CliError::Internal("default config is not an object".into())),
    };
    if let Some(name) = &preset {
        if let Value::Object(m) = preset_values(name)? {
            merged.extend(m);
        }
    }
    merged.extend(file_map);
    for kv in src.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{kv}` is not key=value")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        merged.insert(k.trim().to_string(), value);
    }
    for (k, v) in src.flags {
        merged.insert(k.clone(), v.clone());
    }
    merged.insert("preset".into(), preset.map_or(Value::Null, Value::String));

    let cfg: EngineConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::NotFound {
            what: "config file",
            path: path.to_path_buf(),
        },
        _ => CliError::io(path, e),
    })?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Config(format!("{} must hold a JSON object", path.display()))),
        Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
    }
}

impl EngineConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return bad(format!("keep_ratio {} outside (0, 1]", self.keep_ratio));
        }
        if self.proj_dim == 0 || self.k_domains == 0 || self.max_iters == 0 {
            return bad("proj_dim, k_domains and max_iters must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1]", self.beta));
        }
        if self.tau == 0 || self.budget == 0 || self.eval_interval == 0 {
            return bad("tau, budget and eval_interval must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if let Some(f) = self.floor {
            if !(f >= 0.0 && f.is_finite()) {
                return bad(format!("floor {f} must be non-negative"));
            }
        }
        if let Some(f) = self.noise_fraction {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("noise_fraction {f} outside [0, 1)"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        self.parsed_strategies()?;
        Ok(())
    }

    pub fn parsed_strategies(&self) -> CliResult<Vec<Strategy>> {
        if self.strategies.is_empty() {
            return Err(CliError::Config("strategies must not be empty".into()));
        }
        self.strategies
            .iter()
            .map(|s| s.parse::<Strategy>().map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    pub fn floor_for(&self, k: usize) -> f64 {
        self.floor.unwrap_or_else(|| default_floor(k))
    }

    pub fn update_config(&self) -> UpdateConfig {
        UpdateConfig {
            temperature: self.temperature,
            fit_min_points: self.fit_min_points,
            prediction_window: self.tau,
            loss_terms: self.loss_terms,
        }
    }

    /// Training-loop settings; the number of updates is `budget / tau`
    /// (at least one).
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            hidden: self.hidden,
            batch_size: self.batch_size,
            lr: self.lr,
            budget: self.budget,
            updates: (self.budget / self.tau).max(1),
            beta: self.beta,
            temperature: self.temperature,
            floor: self.floor,
            fit_min_points: self.fit_min_points,
            direction: self.impact_direction,
            loss_terms: self.loss_terms,
            eval_interval: self.eval_interval,
            ..RunConfig::default()
        }
    }

    pub fn corpus_config(&self) -> CliResult<CorpusConfig> {
        let base = CorpusConfig::planted();
        match self.noise_fraction {
            Some(f) => Ok(base.with_noise_fraction(f)?),
            None => Ok(base),
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
        path.as_deref()
            .ok_or_else(|| CliError::Config(format!("`{key}` path is required for this command")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_follow_engine_constants() {
        let c = resolve(&ConfigSources::default()).unwrap();
        assert_eq!(c.k_domains, 72);
        assert_eq!(c.proj_dim, 1024);
        assert_eq!(c.tau, 4000);
        assert_eq!(c.keep_ratio, 0.10);
        assert_eq!(c.preset, None);
    }

    #[test]
    fn precedence_preset_then_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"preset": "desk-small", "k_domains": 5, "beta": 0.3}"#).unwrap();
        let overrides = sets(&["beta=0.5", "impact_metric=dga"]);
        let c = resolve(&ConfigSources {
            file: Some(&path),
            preset: None,
            sets: &overrides,
            flags: &[("k_domains".to_string(), Value::from(6))],
        })
        .unwrap();
        assert_eq!(c.preset.as_deref(), Some("desk-small"));
        assert_eq!(c.proj_dim, 64);
        assert_eq!(c.k_domains, 6);
        assert_eq!(c.beta, 0.5);
        assert_eq!(c.impact_metric, ImpactMetric::DgaAlignment);
    }

    #[test]
    fn flag_preset_beats_file_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"preset": "desk-small"}"#).unwrap();
        let c = resolve(&ConfigSources {
            file: Some(&path),
            preset: Some("desk-medium"),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.proj_dim, 256);
    }

    #[test]
    fn rejects_bad_values() {
        for kv in ["beta=2", "keep_ratio=0", "strategies=[\"best\"]", "nonsense=1", "tau=0"] {
            let s = sets(&[kv]);
            let err = resolve(&ConfigSources {
                sets: &s,
                ..Default::default()
            })
            .unwrap_err();
            assert_eq!(err.exit_code(), 3, "{kv}: {err}");
        }
        let err = resolve(&ConfigSources {
            preset: Some("huge"),
            ..Default::default()
        })
        .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn missing_config_file_is_io() {
        let err = resolve(&ConfigSources {
            file: Some(Path::new("/nonexistent/cfg.json")),
            ..Default::default()
        })
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn run_config_derives_update_count() {
        let c = resolve(&ConfigSources {
            preset: Some("desk-medium"),
            ..Default::default()
        })
        .unwrap();
        let r = c.run_config();
        assert_eq!(r.updates, 25);
        assert_eq!(r.tau(), 200);
        assert_eq!(r.temperature, 0.1);
    }
}
