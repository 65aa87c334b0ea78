use std::path::PathBuf;

use mixsched::toysim::{compare_strategies, make_corpus, run_seeds, Comparison, RunReport};
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::CliResult;
use crate::output::{write_atomic, write_json, write_meta};

/// On-disk report: the engine run plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub engine_config: serde_json::Value,
    #[serde(flatten)]
    pub report: RunReport,
}

pub struct Outcome {
    pub report_paths: Vec<PathBuf>,
    pub comparison_path: PathBuf,
    pub comparison: Comparison,
}

pub fn run(cfg: &EngineConfig) -> CliResult<Outcome> {
    let strategies = cfg.parsed_strategies()?;
    let corpus = make_corpus(&cfg.corpus_config()?, cfg.corpus_seed)?;
    let run_cfg = cfg.run_config();
    run_cfg.validate()?;

    let report_dir = cfg.out_dir.join("reports");
    let mut all = Vec::new();
    let mut report_paths = Vec::new();
    for strategy in &strategies {
        for report in run_seeds(&corpus, strategy, &cfg.seeds, &run_cfg)? {
            let path = report_dir.join(format!("{}-seed{}.json", file_stem(&report.strategy), report.seed));
            write_json(
                &path,
                &ReportFile {
                    engine_config: cfg.to_value(),
                    report: report.clone(),
                },
            )?;
            report_paths.push(path);
            all.push(report);
        }
    }

    let comparison = compare_strategies(&all)?;
    let comparison_path = cfg.out_dir.join("comparison.csv");
    write_atomic(&comparison_path, |w| comparison.write_csv(w))?;
    write_meta(
        &comparison_path,
        "simulate",
        cfg,
        serde_json::json!({ "baseline": comparison.baseline, "tau": run_cfg.tau(), "updates": run_cfg.updates }),
    )?;
    Ok(Outcome {
        report_paths,
        comparison_path,
        comparison,
    })
}

fn file_stem(strategy: &str) -> String {
    strategy
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_strategy_names_become_safe_file_stems() {
        assert_eq!(file_stem("static:0.5/0.25/0.25"), "static_0.5_0.25_0.25");
        assert_eq!(file_stem("dids"), "dids");
    }
}
