//! Seeded experiment runs: build domains, assemble clients, run a variant,
//! score the selected model on the held-out target split.

use std::time::Instant;

use rayon::prelude::*;

use super::config::{DomainEntry, DomainKind, ExperimentConfig};
use crate::data::{load_idx, make_domain, split_domain, train_test_split, Dataset, DomainSpec};
use crate::error::{Error, Result};
use crate::federation::{evaluate, ClientState, Federation, RoundRecord};
use crate::rng::{derive, derive_seed, tag};

/// One (config, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub fingerprint: String,
    pub label: String,
    pub variant: String,
    /// Sweep axis name and value; empty for plain runs.
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub n_source_clients: usize,
    pub target_acc: f64,
    pub best_idd: Option<f64>,
    pub selected_round: usize,
    /// Highest per-round target accuracy seen in the history.
    pub best_round_acc: f64,
    pub wall_time_s: f64,
}

/// Per-round history of one run, kept for trace plots.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub fingerprint: String,
    pub label: String,
    pub seed: u64,
    pub history: Vec<RoundRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Summary { runs: xs.len(), mean, std })
    }
}

/// Summary over all seeds of one config.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub fingerprint: String,
    pub label: String,
    pub variant: String,
    pub axis: String,
    pub value: String,
    pub accuracy: Summary,
    pub mean_best_idd: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<RunTrace>,
}

impl ResultTable {
    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
        self.traces.extend(other.traces);
    }

    /// One row per (fingerprint, label), in first-appearance order. The label
    /// keeps a plain run apart from an identical sweep point.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut order: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            let key = (r.fingerprint.as_str(), r.label.as_str());
            if !order.contains(&key) {
                order.push(key);
            }
        }
        order
            .into_iter()
            .map(|(fp, label)| {
                let rows: Vec<&ResultRow> = self.rows.iter().filter(|r| r.fingerprint == fp && r.label == label).collect();
                let accs: Vec<f64> = rows.iter().map(|r| r.target_acc).collect();
                let idds: Vec<f64> = rows.iter().filter_map(|r| r.best_idd).collect();
                let first = rows[0];
                SummaryRow {
                    fingerprint: fp.to_string(),
                    label: label.to_string(),
                    variant: first.variant.clone(),
                    axis: first.axis.clone(),
                    value: first.value.clone(),
                    accuracy: Summary::of(&accs).expect("non-empty group"),
                    mean_best_idd: (!idds.is_empty()).then(|| idds.iter().sum::<f64>() / idds.len() as f64),
                }
            })
            .collect()
    }

    /// Accuracy summary of the rows with the given label.
    pub fn accuracy(&self, label: &str) -> Option<Summary> {
        let accs: Vec<f64> = self.rows.iter().filter(|r| r.label == label).map(|r| r.target_acc).collect();
        Summary::of(&accs)
    }

    /// Deterministic content only: drops wall times.
    pub fn same_results(&self, other: &ResultTable) -> bool {
        let strip = |t: &ResultTable| -> Vec<ResultRow> {
            t.rows
                .iter()
                .cloned()
                .map(|mut r| {
                    r.wall_time_s = 0.0;
                    r
                })
                .collect()
        };
        strip(self) == strip(other) && self.traces == other.traces
    }
}

/// A resolved config plus the sweep coordinates it stands for.
#[derive(Debug, Clone)]
pub struct Job {
    pub config: ExperimentConfig,
    pub label: String,
    pub axis: String,
    pub value: String,
}

impl Job {
    pub fn plain(config: ExperimentConfig) -> Job {
        Job {
            label: config.variant.clone(),
            config,
            axis: String::new(),
            value: String::new(),
        }
    }
}

/// Train and test parts of one domain.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

fn load_entry(cfg: &ExperimentConfig, entry: &DomainEntry, seed: u64) -> Result<DomainData> {
    let split_rng = || derive(seed, &[tag("split"), tag(&entry.name)]);
    let prep = |ds: Dataset| if cfg.standardize { ds.standardized() } else { ds };
    let (train, test) = match entry.kind {
        DomainKind::Synthetic => {
            let n = entry.n_train + entry.n_test;
            let spec = DomainSpec {
                name: entry.name.clone(),
                base: cfg.base_task.clone(),
                transform: entry.transform(),
                noise_sigma: entry.noise_sigma,
                n_samples: n,
                seed: derive_seed(seed, &[tag("domain"), tag(&entry.name)]),
            };
            let ds = prep(make_domain(&spec)?);
            train_test_split(&ds, entry.n_test as f64 / n as f64, &mut split_rng())?
        }
        DomainKind::Idx => {
            let (images, labels) = (entry.images.as_ref().expect("validated"), entry.labels.as_ref().expect("validated"));
            let mut ds = prep(load_idx(images, labels)?);
            ds.domain_tag = entry.name.clone();
            match (&entry.test_images, &entry.test_labels) {
                (Some(ti), Some(tl)) => {
                    let mut test = prep(load_idx(ti, tl)?);
                    test.domain_tag = entry.name.clone();
                    (ds, test)
                }
                _ => train_test_split(&ds, cfg.test_fraction, &mut split_rng())?,
            }
        }
    };
    Ok(DomainData {
        name: entry.name.clone(),
        train,
        test,
    })
}

/// Builds every domain the config names, for one seed. Domain data depends
/// only on the seed and the domain's name, so restricting the source set or
/// reordering domains does not change the samples.
pub fn build_domains(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<DomainData>> {
    cfg.domains
        .iter()
        .map(|e| load_entry(cfg, e, seed).map_err(|err| err.at_stage(seed, &format!("data:{}", e.name))))
        .collect()
}

/// Assembles source clients (ids `0..n`) and the target client (id `n`).
/// Each source domain is dealt into `clients_per_domain` shards; when that
/// still yields a single source client it is split in two.
pub fn assemble_clients(cfg: &ExperimentConfig, domains: &[DomainData], seed: u64) -> Result<(Vec<ClientState>, Dataset)> {
    let sources = cfg.source_names();
    let mut shards = Vec::new();
    for name in &sources {
        let d = domains.iter().find(|d| &d.name == name).expect("validated source");
        shards.extend(split_domain(
            &d.train,
            cfg.clients_per_domain,
            &mut derive(seed, &[tag("shard"), tag(name)]),
        )?);
    }
    if shards.len() == 1 {
        let only = shards.pop().expect("one shard");
        shards = split_domain(&only, 2, &mut derive(seed, &[tag("shard2"), tag(&sources[0])]))?;
    }
    let target = domains.iter().find(|d| d.name == cfg.target_domain).expect("validated target");
    let dim = target.train.dim();
    let classes = target.train.num_classes();
    if let Some(d) = domains.iter().find(|d| d.train.dim() != dim || d.train.num_classes() != classes) {
        return Err(Error::Config(format!(
            "domain '{}' has {} features / {} classes, target has {dim} / {classes}",
            d.name,
            d.train.dim(),
            d.train.num_classes()
        )));
    }
    let spec = cfg.architecture.layer_spec(dim, classes);
    let mut clients = shards
        .into_iter()
        .enumerate()
        .map(|(i, ds)| ClientState::source(i, ds, &spec))
        .collect::<Result<Vec<_>>>()?;
    let id = clients.len();
    clients.push(ClientState::target(id, &target.train, &spec)?);
    Ok((clients, target.test.clone()))
}

/// Runs one seed of a resolved config.
pub fn run_seed(job: &Job, seed: u64) -> Result<(ResultRow, RunTrace)> {
    let cfg = &job.config;
    let started = Instant::now();
    let domains = build_domains(cfg, seed)?;
    let (clients, test) = assemble_clients(cfg, &domains, seed).map_err(|e| e.at_stage(seed, "clients"))?;
    let n_source_clients = clients.len() - 1;
    let protocol = cfg.protocol_config(seed).map_err(|e| e.at_stage(seed, "config"))?;
    let outcome = Federation::new(clients, protocol, cfg.hyper)
        .and_then(|f| f.with_eval(test.clone()).run())
        .map_err(|e| e.at_stage(seed, "protocol"))?;
    let target_acc = evaluate(&outcome.params, &test).map_err(|e| e.at_stage(seed, "evaluate"))?;
    let best_round_acc = outcome
        .history
        .iter()
        .filter_map(|r| r.target_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let fingerprint = cfg.fingerprint();
    let row = ResultRow {
        fingerprint: fingerprint.clone(),
        label: job.label.clone(),
        variant: cfg.variant.clone(),
        axis: job.axis.clone(),
        value: job.value.clone(),
        seed,
        n_source_clients,
        target_acc,
        best_idd: outcome.best_idd,
        selected_round: outcome.selected_round,
        best_round_acc,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let trace = RunTrace {
        fingerprint,
        label: job.label.clone(),
        seed,
        history: outcome.history,
    };
    Ok((row, trace))
}

/// Runs every (job, seed) pair, in parallel on the current rayon pool.
/// Rows come back in job order, then seed order, regardless of scheduling.
pub fn run_jobs(jobs: &[Job]) -> Result<ResultTable> {
    for j in jobs {
        j.config.validate()?;
    }
    let work: Vec<(&Job, u64)> = jobs.iter().flat_map(|j| j.config.seeds.iter().map(move |&s| (j, s))).collect();
    let results = work.par_iter().map(|&(j, s)| run_seed(j, s)).collect::<Result<Vec<_>>>()?;
    let (rows, traces) = results.into_iter().unzip();
    Ok(ResultTable { rows, traces })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    run_jobs(&[Job::plain(cfg.clone())])
}

/// The same pipeline with the target step skipped and the last round kept.
pub fn baseline_source_only(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut cfg = cfg.clone();
    cfg.variant = "source-only".into();
    run_experiment(&cfg)
}
