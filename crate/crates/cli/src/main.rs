mod args;
mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::{resolve, ConfigSources};
use error::{CliResult, EXIT_OK, EXIT_VALIDATION};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION as u8 } else { EXIT_OK as u8 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mixsched {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let flags = cli.flag_overrides();
    let cfg = resolve(&ConfigSources {
        file: cli.common.config.as_deref(),
        preset: cli.common.preset.as_deref(),
        sets: &cli.common.sets,
        flags: &flags,
    })?;
    match &cli.command {
        Command::Repartition { .. } => {
            let out = commands::repartition::run(&cfg)?;
            println!(
                "{} samples -> {} domains (inertia {:.6e}); wrote {} and {}",
                out.samples,
                out.k,
                out.inertia,
                out.csv.display(),
                out.sidecar.display()
            );
        }
        Command::Impact { .. } => {
            let out = commands::impact::run(&cfg)?;
            println!(
                "{} domains x {} tasks ({}); wrote {}",
                out.matrix.domains(),
                out.task_ids.len(),
                out.matrix.metric.as_str(),
                out.csv.display()
            );
        }
        Command::Schedule { .. } => {
            let out = commands::schedule::run(&cfg)?;
            let probs: Vec<String> = out.record.state.probs.iter().map(|p| format!("{p:.4}")).collect();
            println!(
                "update {} at step {}: [{}]; wrote {} and {}",
                out.record.state.update_count,
                out.record.step,
                probs.join(", "),
                out.state_path.display(),
                out.log_path.display()
            );
        }
        Command::Simulate { .. } => {
            let out = commands::simulate::run(&cfg)?;
            println!("{:<24} {:>5} {:>12} {:>10} {:>8}", "strategy", "runs", "mean_loss", "std", "wins");
            for r in &out.comparison.rows {
                println!(
                    "{:<24} {:>5} {:>12.4} {:>10.4} {:>8}",
                    r.strategy,
                    r.seeds.len(),
                    r.mean_task_loss,
                    r.std_task_loss,
                    format!("{}/{}", r.paired_wins, r.paired_n)
                );
            }
            println!(
                "wrote {} reports and {}",
                out.report_paths.len(),
                out.comparison_path.display()
            );
        }
        Command::Report { inputs } => {
            let out = commands::report::run(&cfg, inputs)?;
            println!(
                "merged {} reports; wrote {}, {} and {}",
                out.reports,
                out.trajectory.display(),
                out.by_updates.display(),
                out.by_noise.display()
            );
        }
    }
    Ok(())
}
