//! Seeded synthetic corpora with planted task alignment.
//!
//! Every task owns a "concept": one Gaussian mean per class. Training domains
//! either reuse a task's concept (aligned), draw their own (distractor), or
//! reuse a task's feature distribution with uniformly random labels (noise).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Aligned { task: usize },
    Distractor,
    Noise { task: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub size: usize,
    /// Probability that a label is replaced by a uniformly random class.
    #[serde(default)]
    pub label_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_in: usize,
    pub n_c: usize,
    pub tasks: usize,
    /// Standard deviation of class means around the origin.
    pub class_spread: f64,
    /// Within-class feature noise.
    pub sigma: f64,
    /// Distance of each distractor concept's centre from the origin.
    #[serde(default)]
    pub distractor_shift: f64,
    pub task_obs: usize,
    pub task_test: usize,
    pub domains: Vec<DomainSpec>,
}

/// Corpus seed used by the planted preset.
pub const PLANTED_CORPUS_SEED: u64 = 2024;

impl CorpusConfig {
    /// One task with an aligned, a distractor, and a noise domain.
    pub fn planted() -> Self {
        Self {
            n_in: 32,
            n_c: 4,
            tasks: 1,
            class_spread: 1.0,
            sigma: 1.5,
            distractor_shift: 4.0,
            task_obs: 200,
            task_test: 1000,
            domains: vec![
                DomainSpec { kind: DomainKind::Aligned { task: 0 }, size: 600, label_noise: 0.0 },
                DomainSpec { kind: DomainKind::Distractor, size: 600, label_noise: 0.0 },
                DomainSpec { kind: DomainKind::Noise { task: 0 }, size: 600, label_noise: 1.0 },
            ],
        }
    }

    /// Drops noise domains, then adds noise-domain samples so they make up
    /// `fraction` of the training pool. Injected data is split into domains no
    /// larger than the largest clean domain.
    pub fn with_noise_fraction(&self, fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("noise fraction {fraction} outside [0, 1)")));
        }
        let mut out = self.clone();
        out.domains.retain(|d| !matches!(d.kind, DomainKind::Noise { .. }));
        let clean: usize = out.domains.iter().map(|d| d.size).sum();
        let chunk = out.domains.iter().map(|d| d.size).max().unwrap_or(1).max(1);
        let mut remaining = (fraction / (1.0 - fraction) * clean as f64).round() as usize;
        let mut task = 0;
        while remaining > 0 {
            let size = remaining.min(chunk);
            out.domains.push(DomainSpec {
                kind: DomainKind::Noise { task: task % out.tasks.max(1) },
                size,
                label_noise: 1.0,
            });
            remaining -= size;
            task += 1;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "corpus needs at least 2 domains, got {}",
                self.domains.len()
            )));
        }
        if self.tasks == 0 {
            return Err(Error::InvalidArgument("corpus needs at least one task".into()));
        }
        if self.n_in == 0 || self.n_c < 2 {
            return Err(Error::InvalidArgument("need n_in >= 1 and n_c >= 2".into()));
        }
        if self.task_obs == 0 || self.task_test == 0 {
            return Err(Error::InvalidArgument("task sets must be non-empty".into()));
        }
        if !(self.sigma >= 0.0 && self.class_spread >= 0.0) {
            return Err(Error::InvalidArgument("sigma and class_spread must be >= 0".into()));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if d.size == 0 {
                return Err(Error::InvalidArgument(format!("domain {i} is empty")));
            }
            if !(0.0..=1.0).contains(&d.label_noise) {
                return Err(Error::InvalidArgument(format!("domain {i} label noise outside [0, 1]")));
            }
            if let DomainKind::Aligned { task } | DomainKind::Noise { task } = d.kind {
                if task >= self.tasks {
                    return Err(Error::InvalidArgument(format!("domain {i} references task {task}")));
                }
            }
        }
        Ok(())
    }
}

/// Class means for one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub task: usize,
    /// Observation batch: supplies task gradients, FIM and loss history.
    pub observe: Vec<Sample>,
    /// Held-out evaluation set for final metrics.
    pub test: Vec<Sample>,
    /// Generator indices that genuinely help this task.
    pub helpful: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub config: CorpusConfig,
    pub seed: u64,
    pub concepts: Vec<Concept>,
    pub samples: Vec<Sample>,
    pub tasks: Vec<TaskSet>,
}

impl SyntheticCorpus {
    pub fn k(&self) -> usize {
        self.config.domains.len()
    }

    /// Sample indices grouped by generator.
    pub fn generator_domains(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, s) in self.samples.iter().enumerate() {
            out[s.domain].push(i);
        }
        out
    }

    pub fn domain_labels(&self) -> Vec<String> {
        self.config
            .domains
            .iter()
            .map(|d| match d.kind {
                DomainKind::Aligned { task } => format!("aligned:{task}"),
                DomainKind::Distractor => "distractor".to_string(),
                DomainKind::Noise { task } => format!("noise:{task}"),
            })
            .collect()
    }
}

fn draw_concept(rng: &mut ChaCha8Rng, n_c: usize, n_in: usize, spread: f64, shift: f64) -> Concept {
    let mut centre: Vec<f64> = (0..n_in).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = centre.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    centre.iter_mut().for_each(|v| *v *= shift / norm);
    Concept {
        means: (0..n_c)
            .map(|_| {
                centre
                    .iter()
                    .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect(),
    }
}

fn draw(rng: &mut ChaCha8Rng, concept: &Concept, sigma: f64, label: usize, domain: usize) -> Sample {
    let features = concept.means[label]
        .iter()
        .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Sample { features, label, domain }
}

/// Deterministic in `(config, seed)`.
pub fn make_corpus(config: &CorpusConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_c = config.n_c;
    let concepts: Vec<Concept> = (0..config.tasks)
        .map(|_| draw_concept(&mut rng, n_c, config.n_in, config.class_spread, 0.0))
        .collect();

    let mut samples = Vec::new();
    for (d, spec) in config.domains.iter().enumerate() {
        let own = match spec.kind {
            DomainKind::Distractor => Some(draw_concept(
                &mut rng,
                n_c,
                config.n_in,
                config.class_spread,
                config.distractor_shift,
            )),
            _ => None,
        };
        let concept = match spec.kind {
            DomainKind::Aligned { task } | DomainKind::Noise { task } => &concepts[task],
            DomainKind::Distractor => own.as_ref().expect("drawn above"),
        };
        for _ in 0..spec.size {
            let class = rng.random_range(0..n_c);
            let mut s = draw(&mut rng, concept, config.sigma, class, d);
            if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
                s.label = rng.random_range(0..n_c);
            }
            samples.push(s);
        }
    }

    let tasks = (0..config.tasks)
        .map(|t| {
            let mut set = |n: usize| -> Vec<Sample> {
                (0..n)
                    .map(|_| {
                        let class = rng.random_range(0..n_c);
                        draw(&mut rng, &concepts[t], config.sigma, class, usize::MAX)
                    })
                    .collect()
            };
            let observe = set(config.task_obs);
            let test = set(config.task_test);
            let helpful = config
                .domains
                .iter()
                .enumerate()
                .filter(|(_, d)| d.kind == DomainKind::Aligned { task: t } && d.label_noise < 1.0)
                .map(|(i, _)| i)
                .collect();
            TaskSet { task: t, observe, test, helpful }
        })
        .collect();

    Ok(SyntheticCorpus {
        config: config.clone(),
        seed,
        concepts,
        samples,
        tasks,
    })
}
