use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

/// Gradient-clustered domain mixture scheduling.
#[derive(Debug, Parser)]
#[command(name = "mixsched", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat JSON config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Named preset applied under the config file (desk-small, desk-medium).
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Single run seed; replaces `seeds` for simulate and the k-means seed for
    /// repartition.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Comma-separated strategies: dids, dga, uniform, random, static:p0/p1/...
    #[arg(long, global = true, value_name = "NAME[,NAME...]", value_delimiter = ',')]
    pub strategy: Vec<String>,

    /// Override any config key; the value is parsed as JSON when possible.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster a gradient trace into domains.
    Repartition {
        /// Training-sample gradient trace.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Number of domains.
        #[arg(long, value_name = "N")]
        k: Option<usize>,
    },
    /// Score domains against downstream tasks.
    Impact {
        /// Training-sample gradient trace.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// `sample_id,domain` CSV from repartition.
        #[arg(long, value_name = "PATH")]
        partition: Option<PathBuf>,
        /// Task-sample gradient trace; each record's domain hint is its task id.
        #[arg(long, value_name = "PATH")]
        task_trace: Option<PathBuf>,
        /// fim_kl or dga.
        #[arg(long, value_name = "METRIC")]
        metric: Option<String>,
    },
    /// Apply one sampling-probability update.
    Schedule {
        /// Impact CSV from the impact command.
        #[arg(long, value_name = "PATH")]
        impact: Option<PathBuf>,
        /// `task,step,loss` CSV.
        #[arg(long, value_name = "PATH")]
        losses: Option<PathBuf>,
        /// Previous state JSON; uniform when absent.
        #[arg(long, value_name = "PATH")]
        state: Option<PathBuf>,
    },
    /// Train the toy model under each strategy and compare.
    Simulate {
        /// Training steps per run.
        #[arg(long, value_name = "STEPS")]
        budget: Option<u64>,
        /// Steps between probability updates.
        #[arg(long, value_name = "STEPS")]
        tau: Option<u64>,
        /// Share of the corpus drawn from noise domains.
        #[arg(long, value_name = "FRACTION")]
        noise_fraction: Option<f64>,
        /// Seed for the synthetic corpus.
        #[arg(long, value_name = "N")]
        corpus_seed: Option<u64>,
    },
    /// Merge simulation reports into plot-ready CSVs.
    Report {
        /// Report JSON files or directories containing them.
        #[arg(required = true, value_name = "PATH")]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Repartition { .. } => "repartition",
            Command::Impact { .. } => "impact",
            Command::Schedule { .. } => "schedule",
            Command::Simulate { .. } => "simulate",
            Command::Report { .. } => "report",
        }
    }
}

impl Cli {
    /// Dedicated flags as config overrides.
    pub fn flag_overrides(&self) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Value| out.push((k.to_string(), v));
        let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
        let c = &self.common;
        if let Some(p) = &c.out {
            put("out_dir", path(p));
        }
        if !c.strategy.is_empty() {
            put("strategies", Value::from(c.strategy.clone()));
        }
        if let Some(s) = c.seed {
            match self.command {
                Command::Repartition { .. } => put("kmeans_seed", Value::from(s)),
                _ => put("seeds", Value::from(vec![s])),
            }
        }
        match &self.command {
            Command::Repartition { trace, k } => {
                if let Some(p) = trace {
                    put("trace", path(p));
                }
                if let Some(k) = k {
                    put("k_domains", Value::from(*k));
                }
            }
            Command::Impact {
                trace,
                partition,
                task_trace,
                metric,
            } => {
                if let Some(p) = trace {
                    put("trace", path(p));
                }
                if let Some(p) = partition {
                    put("partition", path(p));
                }
                if let Some(p) = task_trace {
                    put("task_trace", path(p));
                }
                if let Some(m) = metric {
                    put("impact_metric", Value::String(m.clone()));
                }
            }
            Command::Schedule { impact, losses, state } => {
                if let Some(p) = impact {
                    put("impact", path(p));
                }
                if let Some(p) = losses {
                    put("losses", path(p));
                }
                if let Some(p) = state {
                    put("state", path(p));
                }
            }
            Command::Simulate {
                budget,
                tau,
                noise_fraction,
                corpus_seed,
            } => {
                if let Some(b) = budget {
                    put("budget", Value::from(*b));
                }
                if let Some(t) = tau {
                    put("tau", Value::from(*t));
                }
                if let Some(f) = noise_fraction {
                    put("noise_fraction", Value::from(*f));
                }
                if let Some(s) = corpus_seed {
                    put("corpus_seed", Value::from(*s));
                }
            }
            Command::Report { .. } => {}
        }
        out
    }
}
