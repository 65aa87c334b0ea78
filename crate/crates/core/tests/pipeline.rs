mod common;

use std::fs::File;
use std::io::{BufReader, BufWriter};

use mixsched::cluster::{read_partition_csv, write_partition_csv};
use mixsched::impact::{read_impact_csv, write_impact_csv};
use mixsched::scheduler::{default_floor, scheduled_update, UpdateConfig};
use mixsched::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Three gradient clusters in `dim` dimensions, tagged with their generator as
/// the domain hint.
fn clustered_trace(seed: u64, per_cluster: usize, dim: usize) -> GradientTrace {
    let mut rng = common::rng(seed);
    let centres: Vec<Vec<f64>> = (0..3).map(|_| common::gaussian_vec(&mut rng, dim, 6.0)).collect();
    let mut trace = GradientTrace::new(dim, "synthetic");
    let mut id = 0;
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_cluster {
            let noise = common::gaussian_vec(&mut rng, dim, 0.3);
            let v = centre.iter().zip(&noise).map(|(a, b)| (a + b) as f32).collect();
            trace.push(TraceRecord::new(id, c as i32, v));
            id += 1;
        }
    }
    trace
}

#[test]
fn trace_file_round_trip_and_repartition() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grads.gtrc");
    let trace = clustered_trace(1, 40, 64);
    let written = write_trace(&trace, BufWriter::new(File::create(&path).unwrap())).unwrap();
    assert_eq!(written as u64, std::fs::metadata(&path).unwrap().len());
    assert_eq!(written, 16 + trace.len() * (8 + 4 * 64));

    let back = read_trace(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(back.records, trace.records);

    let proj = make_projection(64, 16, 3).unwrap();
    let part = repartition(&back, 1.0, &proj, 3, 11).unwrap();
    assert_eq!(part.assignments.len(), 120);
    assert!(domain_sizes(&part).iter().all(|&n| n == 40));
    // generator clusters map one-to-one onto domains
    for members in part.members() {
        let hint = back.records[members[0] as usize].domain_hint;
        assert!(members.iter().all(|&id| back.records[id as usize].domain_hint == hint));
    }
}

#[test]
fn partition_csv_round_trip() {
    let trace = clustered_trace(2, 10, 8);
    let proj = make_projection(8, 8, 0).unwrap();
    let part = repartition(&trace, 0.5, &proj, 3, 0).unwrap();
    let mut buf = Vec::new();
    write_partition_csv(&part, &mut buf).unwrap();
    assert_eq!(read_partition_csv(buf.as_slice()).unwrap(), part.assignments);
}

#[test]
fn loss_history_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    let mut histories = Vec::new();
    for task in 0..3u32 {
        let mut h = LossHistory::new(task);
        for i in 0..6u64 {
            h.push(i * 50, 2.0 / (1.0 + i as f64 + task as f64)).unwrap();
        }
        histories.push(h);
    }
    write_loss_history(&histories, File::create(&path).unwrap()).unwrap();
    let back = read_loss_history(File::open(&path).unwrap()).unwrap();
    assert_eq!(back, histories);
}

/// Trace → domains → impact → one scheduled update, checking that the domain
/// whose gradient matches the task gains probability.
#[test]
fn end_to_end_update_favours_matching_domain() {
    let dim = 32;
    let trace = clustered_trace(5, 30, dim);
    let proj = make_projection(dim, 12, 9).unwrap();
    let part = repartition(&trace, 1.0, &proj, 3, 4).unwrap();

    let vectors = trace.vectors_f64();
    let members = part.members();
    let domain_means: Vec<Vec<f64>> = members
        .iter()
        .map(|ids| {
            let mut m = vec![0.0; dim];
            for &id in ids {
                for (a, v) in m.iter_mut().zip(&vectors[id as usize]) {
                    *a += v / ids.len() as f64;
                }
            }
            m
        })
        .collect();
    let target = part.domain_of(0).unwrap();
    let task_mean: Vec<f64> = domain_means[target].iter().map(|v| v + 0.05).collect();

    let domains: Vec<DomainGradient> = domain_means
        .iter()
        .enumerate()
        .map(|(i, m)| DomainGradient::with_mean(i, m.clone()))
        .collect();
    let tasks = vec![TaskGradient::new(0, task_mean, 16)];
    let fim = FimDiagonal::identity(dim);
    let impact = build_impact_matrix(&domains, &tasks, &[fim], ImpactMetric::FimKl).unwrap();
    let scores: Vec<f64> = impact.normalized.iter().map(|r| r[0]).collect();
    assert_eq!(argmax(&scores), target, "{scores:?}");
    assert!(scores[target] > 1.0 / 3.0);

    let mut h = LossHistory::new(0);
    for (i, l) in [2.0, 1.6, 1.35, 1.2, 1.1].iter().enumerate() {
        h.push(100 * i as u64, *l).unwrap();
    }
    let state = SamplingState::new(3, 0.1, 100, default_floor(3)).unwrap();
    let cfg = UpdateConfig {
        temperature: 0.1,
        prediction_window: 100,
        ..UpdateConfig::default()
    };
    let out = scheduled_update(&state, &impact, &[h], &cfg).unwrap();
    let p = &out.state.probs;
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(argmax(p), target, "{p:?}");
    assert!(p[target] > 1.0 / 3.0);
    assert!(out.fits[0].is_some());
    assert!(out.potentials[0] > 0.0);
    assert!((out.improvements[0] - 0.1).abs() < 1e-12);
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

#[test]
fn impact_csv_round_trip() {
    let domains: Vec<DomainGradient> = (0..3)
        .map(|i| DomainGradient::with_mean(i, vec![i as f64, 1.0 - i as f64]))
        .collect();
    let tasks = vec![
        TaskGradient::new(0, vec![0.5, 0.5], 4),
        TaskGradient::new(1, vec![2.0, -1.0], 4),
    ];
    let fims = vec![FimDiagonal::identity(2), FimDiagonal::identity(2)];
    let m = build_impact_matrix(&domains, &tasks, &fims, ImpactMetric::FimKl).unwrap();
    let mut buf = Vec::new();
    write_impact_csv(&m, &mut buf).unwrap();
    let back = read_impact_csv(buf.as_slice()).unwrap();
    for (a, b) in back.normalized.iter().flatten().zip(m.normalized.iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn shuffled(trace: &GradientTrace, seed: u64) -> GradientTrace {
    let mut out = trace.clone();
    out.records.shuffle(&mut common::rng(seed));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn repartition_ignores_record_order(data_seed in 0u64..1000, perm_seed in 0u64..1000, k in 1usize..6) {
        let trace = clustered_trace(data_seed, 12, 20);
        let proj = make_projection(20, 8, data_seed).unwrap();
        let a = repartition(&trace, 0.3, &proj, k, 17).unwrap();
        let b = repartition(&shuffled(&trace, perm_seed), 0.3, &proj, k, 17).unwrap();
        prop_assert_eq!(a.assignments, b.assignments);
        prop_assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn partition_inertia_matches_recomputation(seed in 0u64..1000, k in 1usize..8) {
        let mut rng = common::rng(seed);
        let n = rng.random_range(k..60);
        let points: Vec<Vec<f64>> = (0..n).map(|_| common::gaussian_vec(&mut rng, 5, 1.0)).collect();
        let p = kmeans(&points, k, seed, 50).unwrap();
        let recomputed: f64 = points
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let c = &p.centroids[p.assignments[&(i as u32)]];
                x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum();
        prop_assert!((p.inertia - recomputed).abs() <= 1e-6 * recomputed.max(1.0));
        prop_assert!(domain_sizes(&p).iter().all(|&s| s > 0));
    }

    #[test]
    fn projection_is_linear(seed in 0u64..500, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = common::rng(seed);
        let r = make_projection(40, 10, seed).unwrap();
        let u = common::gaussian_vec(&mut rng, 40, 1.0);
        let v = common::gaussian_vec(&mut rng, 40, 1.0);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = project(&r, &combo).unwrap();
        let (pu, pv) = (project(&r, &u).unwrap(), project(&r, &v).unwrap());
        for i in 0..10 {
            let rhs = alpha * pu[i] + beta * pv[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-5 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn sketch_pipeline_is_deterministic(seed in 0u64..1000) {
        let trace = clustered_trace(seed, 5, 16);
        let proj = make_projection(16, 6, seed).unwrap();
        let a = repartition(&trace, 0.25, &proj, 3, seed).unwrap();
        let b = repartition(&trace, 0.25, &make_projection(16, 6, seed).unwrap(), 3, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn normalized_columns_lie_on_simplex(raw in prop::collection::vec(prop::collection::vec(0.0f64..50.0, 3), 2..8)) {
        for j in 0..3 {
            let col: f64 = normalize_impact(&raw).iter().map(|r| r[j]).sum();
            prop_assert!((col - 1.0).abs() < 1e-9);
        }
    }
}
