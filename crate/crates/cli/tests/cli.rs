use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixsched::{write_trace, GradientTrace, TraceRecord};
use serde_json::Value;

fn mixsched(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixsched"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert_eq!(code(o), 0, "stdout: {}\nstderr: {}", String::from_utf8_lossy(&o.stdout), stderr(o));
}

fn save_trace(path: &Path, dim: usize, records: &[(u32, i32, Vec<f32>)]) {
    let mut t = GradientTrace::new(dim, "test");
    for (id, hint, v) in records {
        t.push(TraceRecord::new(*id, *hint, v.clone()));
    }
    write_trace(&t, fs::File::create(path).unwrap()).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

/// Two domains with mean gradients (−1, 0) and (−2, 0); one task with mean 0
/// and empirical Fisher diagonal (1, 1).
fn golden_inputs(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let trace = dir.join("train.gtrc");
    save_trace(
        &trace,
        2,
        &[
            (0, -1, vec![-1.0, 0.5]),
            (1, -1, vec![-1.0, -0.5]),
            (2, -1, vec![-2.0, 1.0]),
            (3, -1, vec![-2.0, -1.0]),
        ],
    );
    let partition = dir.join("partition.csv");
    fs::write(&partition, "sample_id,domain\n0,0\n1,0\n2,1\n3,1\n").unwrap();
    let tasks = dir.join("tasks.gtrc");
    save_trace(&tasks, 2, &[(100, 0, vec![1.0, 1.0]), (101, 0, vec![-1.0, -1.0])]);
    (trace, partition, tasks)
}

fn impact_args<'a>(t: &'a Path, p: &'a Path, s: &'a Path, out: &'a str) -> Vec<&'a str> {
    vec![
        "impact",
        "--trace",
        t.to_str().unwrap(),
        "--partition",
        p.to_str().unwrap(),
        "--task-trace",
        s.to_str().unwrap(),
        "--out",
        out,
    ]
}

#[test]
fn repartition_writes_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<(u32, i32, Vec<f32>)> = (0..10)
        .map(|i| {
            let s = if i < 5 { 3.0 } else { -3.0 };
            (i, -1, vec![s, s + i as f32 * 0.01, 0.1, -s])
        })
        .collect();
    save_trace(&dir.path().join("g.gtrc"), 4, &records);
    let o = mixsched(dir.path(), &["repartition", "--trace", "g.gtrc", "--k", "2", "--out", "part", "--set", "keep_ratio=1"]);
    assert_ok(&o);

    let rows = csv_rows(&dir.path().join("part/partition.csv"));
    assert_eq!(rows.len(), 10);
    assert_ne!(rows[0][1], rows[9][1]);
    let side = read_json(&dir.path().join("part/partition.json"));
    assert_eq!(side["k"], 2);
    assert_eq!(side["domain_sizes"], serde_json::json!([5, 5]));
    assert_eq!(side["config"]["k_domains"], 2);
    assert_eq!(side["config"]["effective_proj_dim"], 4);
}

#[test]
fn repartition_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mixsched(dir.path(), &["repartition", "--trace", "missing.gtrc"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("trace not found"), "{}", stderr(&o));

    save_trace(&dir.path().join("two.gtrc"), 2, &[(0, -1, vec![1.0, 0.0]), (1, -1, vec![0.0, 1.0])]);
    let o = mixsched(dir.path(), &["repartition", "--trace", "two.gtrc", "--k", "3"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    fs::write(dir.path().join("junk.gtrc"), b"not a trace at all").unwrap();
    let o = mixsched(dir.path(), &["repartition", "--trace", "junk.gtrc"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));

    let o = mixsched(dir.path(), &["repartition"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn impact_golden_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (t, p, s) = golden_inputs(dir.path());
    let o = mixsched(dir.path(), &impact_args(&t, &p, &s, "fim"));
    assert_ok(&o);
    let rows = csv_rows(&dir.path().join("fim/impact.csv"));
    assert_eq!(rows.len(), 2);
    let raw: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    let norm: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!((raw[0] - 0.5).abs() < 1e-12 && (raw[1] - 2.0).abs() < 1e-12, "{raw:?}");
    assert!((norm[0] - 0.7685).abs() < 1e-4, "{norm:?}");
    assert!((norm[1] - 0.2315).abs() < 1e-4, "{norm:?}");

    let meta = read_json(&dir.path().join("fim/impact.csv.meta.json"));
    assert_eq!(meta["task_ids"], serde_json::json!([0]));
    assert_eq!(meta["config"]["impact_metric"], "fim_kl");
}

#[test]
fn impact_metrics_share_keys_but_not_values() {
    let dir = tempfile::tempdir().unwrap();
    let (t, p, s) = golden_inputs(dir.path());
    assert_ok(&mixsched(dir.path(), &impact_args(&t, &p, &s, "fim")));
    let mut args = impact_args(&t, &p, &s, "dga");
    args.extend(["--metric", "dga"]);
    assert_ok(&mixsched(dir.path(), &args));

    let fim = csv_rows(&dir.path().join("fim/impact.csv"));
    let dga = csv_rows(&dir.path().join("dga/impact.csv"));
    let keys = |rows: &[Vec<String>]| rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect::<Vec<_>>();
    assert_eq!(keys(&fim), keys(&dga));
    assert_ne!(
        fim.iter().map(|r| &r[2]).collect::<Vec<_>>(),
        dga.iter().map(|r| &r[2]).collect::<Vec<_>>()
    );
    assert!(dga.iter().all(|r| r[4] == "dga_alignment"));
}

#[test]
fn impact_zero_difference_gives_zero_raw() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.gtrc");
    save_trace(&t, 3, &[(0, -1, vec![0.5, 1.0, -1.0]), (1, -1, vec![0.5, 1.0, -1.0])]);
    let p = dir.path().join("p.csv");
    fs::write(&p, "sample_id,domain\n0,0\n1,0\n").unwrap();
    let s = dir.path().join("s.gtrc");
    save_trace(&s, 3, &[(9, 0, vec![0.5, 1.0, -1.0])]);
    assert_ok(&mixsched(dir.path(), &impact_args(&t, &p, &s, "zero")));
    let rows = csv_rows(&dir.path().join("zero/impact.csv"));
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn impact_dimension_mismatch_is_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (t, p, _) = golden_inputs(dir.path());
    let s = dir.path().join("wide.gtrc");
    save_trace(&s, 3, &[(0, 0, vec![1.0, 2.0, 3.0])]);
    let o = mixsched(dir.path(), &impact_args(&t, &p, &s, "x"));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!dir.path().join("x/impact.csv").exists());
}

#[test]
fn schedule_chains_state_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let (t, p, s) = golden_inputs(dir.path());
    assert_ok(&mixsched(dir.path(), &impact_args(&t, &p, &s, "run")));
    fs::write(
        dir.path().join("loss.csv"),
        "task,step,loss\n0,0,2.0\n0,100,1.6\n0,200,1.35\n0,300,1.2\n",
    )
    .unwrap();
    let args = [
        "schedule",
        "--impact",
        "run/impact.csv",
        "--losses",
        "loss.csv",
        "--out",
        "run",
        "--set",
        "tau=100",
        "--set",
        "temperature=0.1",
    ];
    assert_ok(&mixsched(dir.path(), &args));
    let first = read_json(&dir.path().join("run/state.json"));
    let p0: Vec<f64> = serde_json::from_value(first["state"]["probs"].clone()).unwrap();
    assert!(p0[0] > p0[1], "{p0:?}");
    assert_eq!(first["step"], 300);
    assert_eq!(first["config"]["tau"], 100);

    let mut again = args.to_vec();
    again.extend(["--state", "run/state.json"]);
    assert_ok(&mixsched(dir.path(), &again));
    let second = read_json(&dir.path().join("run/state.json"));
    assert_eq!(second["state"]["update_count"], 2);
    assert_eq!(second["state"]["prev_probs"], first["state"]["probs"]);
    let log = csv_rows(&dir.path().join("run/schedule.csv"));
    assert_eq!(log.len(), 4);
    assert_eq!((log[0][0].as_str(), log[3][0].as_str()), ("1", "2"));
}

#[test]
fn schedule_rejects_state_with_wrong_k() {
    let dir = tempfile::tempdir().unwrap();
    let (t, p, s) = golden_inputs(dir.path());
    assert_ok(&mixsched(dir.path(), &impact_args(&t, &p, &s, "run")));
    fs::write(dir.path().join("loss.csv"), "task,step,loss\n0,0,2.0\n0,100,1.5\n").unwrap();
    fs::write(
        dir.path().join("state.json"),
        r#"{"k":3,"probs":[0.2,0.3,0.5],"prev_probs":[0.2,0.3,0.5],"beta":0.1,"update_count":0,"tau":10,"floor":0.0}"#,
    )
    .unwrap();
    let o = mixsched(
        dir.path(),
        &["schedule", "--impact", "run/impact.csv", "--losses", "loss.csv", "--state", "state.json"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

const SMALL: [&str; 2] = ["--preset", "desk-small"];

#[test]
fn simulate_uniform_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--strategy", "uniform", "--seed", "7", "--out", "sim"];
    args.extend(SMALL);
    assert_ok(&mixsched(dir.path(), &args));
    let reports: Vec<_> = fs::read_dir(dir.path().join("sim/reports")).unwrap().collect();
    assert_eq!(reports.len(), 1);
    let r = read_json(&dir.path().join("sim/reports/uniform-seed7.json"));
    let traj: Vec<Vec<f64>> = serde_json::from_value(r["trajectory"].clone()).unwrap();
    assert!(!traj.is_empty());
    assert!(traj.iter().all(|p| p == &traj[0]));
    assert_eq!(r["engine_config"]["preset"], "desk-small");
    assert_eq!(r["engine_config"]["seeds"], serde_json::json!([7]));
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let mut args = vec!["simulate", "--strategy", "dids,uniform", "--out", out];
        args.extend(SMALL);
        assert_ok(&mixsched(dir.path(), &args));
    }
    for name in ["dids-seed1.json", "uniform-seed3.json"] {
        let a = fs::read(dir.path().join("a/reports").join(name)).unwrap();
        let b = fs::read(dir.path().join("b/reports").join(name)).unwrap();
        // configs differ only in out_dir
        let strip = |v: Vec<u8>| String::from_utf8(v).unwrap().replace("\"out_dir\": \"a\"", "\"out_dir\": \"b\"");
        assert_eq!(strip(a), strip(b));
    }
    assert_eq!(
        fs::read(dir.path().join("a/comparison.csv")).unwrap(),
        fs::read(dir.path().join("b/comparison.csv")).unwrap()
    );
}

#[test]
fn simulate_rejects_unknown_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let o = mixsched(dir.path(), &["simulate", "--strategy", "dids,greedy"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("greedy"), "{}", stderr(&o));
}

#[test]
fn simulate_planted_comparison_favours_dids() {
    let dir = tempfile::tempdir().unwrap();
    let o = mixsched(
        dir.path(),
        &["simulate", "--preset", "desk-medium", "--strategy", "dids,uniform", "--out", "sim"],
    );
    assert_ok(&o);
    let rows = csv_rows(&dir.path().join("sim/comparison.csv"));
    let dids = rows.iter().find(|r| r[0] == "dids").unwrap();
    assert_eq!(dids[7], "true");
    assert!(dids[5].parse::<usize>().unwrap() >= 4);
    let meta = read_json(&dir.path().join("sim/comparison.csv.meta.json"));
    assert_eq!(meta["baseline"], "uniform");
    assert_eq!(meta["updates"], 25);
}

#[test]
fn report_trajectory_rows_match_updates_times_k() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--strategy", "dids", "--seed", "1", "--out", "sim"];
    args.extend(SMALL);
    assert_ok(&mixsched(dir.path(), &args));
    assert_ok(&mixsched(dir.path(), &["report", "sim/reports/dids-seed1.json", "--out", "rep"]));

    let report = read_json(&dir.path().join("sim/reports/dids-seed1.json"));
    let updates = report["trajectory"].as_array().unwrap().len();
    let k = report["k"].as_u64().unwrap() as usize;
    assert_eq!(updates, 10);
    assert_eq!(csv_rows(&dir.path().join("rep/trajectory.csv")).len(), updates * k);
    for f in ["trajectory.csv", "score_vs_updates.csv", "score_vs_noise.csv"] {
        let meta = read_json(&dir.path().join("rep").join(format!("{f}.meta.json")));
        assert_eq!(meta["inputs"].as_array().unwrap().len(), 1);
    }
}

#[test]
fn report_rejects_mixed_domain_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--strategy", "uniform", "--seed", "1", "--out", "sim"];
    args.extend(SMALL);
    assert_ok(&mixsched(dir.path(), &args));
    let mut other = read_json(&dir.path().join("sim/reports/uniform-seed1.json"));
    other["k"] = Value::from(5);
    fs::write(dir.path().join("other.json"), other.to_string()).unwrap();
    let o = mixsched(dir.path(), &["report", "sim/reports", "other.json", "--out", "rep"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("not mergeable"));

    let o = mixsched(dir.path(), &["report", "nowhere", "--out", "rep"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn report_sweeps_one_row_per_frequency_and_strategy() {
    let dir = tempfile::tempdir().unwrap();
    for (tau, out) in [("500", "u2"), ("100", "u10")] {
        let mut args = vec!["simulate", "--strategy", "dids,uniform", "--tau", tau, "--out", out];
        args.extend(SMALL);
        assert_ok(&mixsched(dir.path(), &args));
    }
    for (frac, out) in [("0.0", "n0"), ("0.25", "n25")] {
        let mut args = vec!["simulate", "--strategy", "dids", "--noise-fraction", frac, "--out", out];
        args.extend(SMALL);
        assert_ok(&mixsched(dir.path(), &args));
    }
    assert_ok(&mixsched(dir.path(), &["report", "u2", "u10", "--out", "freq"]));
    let rows = csv_rows(&dir.path().join("freq/score_vs_updates.csv"));
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[1].clone(), r[3].clone())).collect();
    assert_eq!(
        keys,
        [("2", "dids"), ("2", "uniform"), ("10", "dids"), ("10", "uniform")]
            .map(|(a, b)| (a.to_string(), b.to_string()))
    );
    assert!(rows.iter().all(|r| r[4] == "3"));

    assert_ok(&mixsched(dir.path(), &["report", "n0", "n25", "--out", "noise"]));
    let rows = csv_rows(&dir.path().join("noise/score_vs_noise.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2], "0.0000");
    assert_eq!(rows[0][6].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[1][2], "0.2500");
}

#[test]
fn usage_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mixsched(dir.path(), &["frobnicate"])), 3);
    assert_eq!(code(&mixsched(dir.path(), &["simulate", "--budget", "many"])), 3);
    assert_eq!(code(&mixsched(dir.path(), &["--help"])), 0);
    let o = mixsched(dir.path(), &["simulate", "--config", "absent.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"preset": "desk-small", "strategies": ["uniform"], "seeds": [4], "budget": 200}"#,
    )
    .unwrap();
    assert_ok(&mixsched(dir.path(), &["simulate", "--config", "cfg.json", "--seed", "5", "--out", "o"]));
    let r = read_json(&dir.path().join("o/reports/uniform-seed5.json"));
    assert_eq!(r["budget"], 200);
    assert_eq!(r["engine_config"]["seeds"], serde_json::json!([5]));
}
