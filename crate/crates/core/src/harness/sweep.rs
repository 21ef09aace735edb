//! Study sweeps: communication rounds, client splits, source combinations.
//!
//! Each sweep resolves the base config into one job per axis value and
//! touches only the fields that axis owns.

use super::config::{ExperimentConfig, SweepAxis};
use super::experiment::{run_jobs, Job, ResultTable};
use crate::error::{Error, Result};

pub const DEFAULT_ROUNDS: [usize; 4] = [6, 15, 30, 60];
pub const DEFAULT_SPLITS: [usize; 4] = [1, 3, 5, 10];

/// Keeps the client epoch budget at `hyper.total_epochs` over `rounds`
/// rounds: every phase runs `total / rounds` epochs per round and the final
/// round also takes the remainder.
pub fn with_rounds(cfg: &ExperimentConfig, rounds: usize) -> Result<ExperimentConfig> {
    let total = cfg.hyper.total_epochs;
    if rounds == 0 || rounds > total {
        return Err(Error::Config(format!("cannot spread {total} epochs over {rounds} rounds")));
    }
    let mut out = cfg.clone();
    let per = total / rounds;
    out.protocol.rounds = rounds;
    out.protocol.epochs_source = per;
    out.protocol.epochs_finetune = per;
    out.protocol.epochs_idd = per;
    out.protocol.final_round_extra = total % rounds;
    out.sweep = None;
    Ok(out)
}

pub fn with_clients_per_domain(cfg: &ExperimentConfig, factor: usize) -> Result<ExperimentConfig> {
    if factor == 0 {
        return Err(Error::Config("split factor must be at least 1".into()));
    }
    let mut out = cfg.clone();
    out.clients_per_domain = factor;
    out.sweep = None;
    Ok(out)
}

/// Non-empty subsets of `names` whose size is in `sizes`, by size then in
/// declaration order.
pub fn subsets(names: &[String], sizes: &[usize]) -> Vec<Vec<String>> {
    let n = names.len();
    let mut out: Vec<Vec<String>> = (1u64..(1 << n))
        .filter(|m| sizes.contains(&(m.count_ones() as usize)))
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| names[i].clone()).collect())
        .collect();
    out.sort_by_key(|s| s.len());
    out
}

fn values_or<'a>(cfg: &'a ExperimentConfig, axis: SweepAxis, default: &'a [usize]) -> &'a [usize] {
    match &cfg.sweep {
        Some(s) if s.axis == axis && !s.values.is_empty() => &s.values,
        _ => default,
    }
}

fn job(config: ExperimentConfig, axis: SweepAxis, value: String) -> Job {
    Job {
        label: format!("{}:{}={}", config.variant, axis.as_str(), value),
        config,
        axis: axis.as_str().into(),
        value,
    }
}

/// Resolves a sweep into jobs. Values come from the config's `[sweep]`
/// table when it names this axis, else from the defaults: rounds 6/15/30/60,
/// splits 1/3/5/10, and every source subset of size two or more.
pub fn sweep_jobs(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<Job>> {
    match axis {
        SweepAxis::Rounds => values_or(cfg, axis, &DEFAULT_ROUNDS)
            .iter()
            .map(|&r| Ok(job(with_rounds(cfg, r)?, axis, r.to_string())))
            .collect(),
        SweepAxis::ClientsPerDomain => values_or(cfg, axis, &DEFAULT_SPLITS)
            .iter()
            .map(|&f| Ok(job(with_clients_per_domain(cfg, f)?, axis, f.to_string())))
            .collect(),
        SweepAxis::SourceSubset => {
            let names = cfg.source_names();
            let default: Vec<usize> = (2..=names.len()).collect();
            let sizes = values_or(cfg, axis, &default);
            let subs = subsets(&names, sizes);
            if subs.is_empty() {
                return Err(Error::Config(format!(
                    "no source subsets of sizes {sizes:?} among {} sources",
                    names.len()
                )));
            }
            Ok(subs
                .into_iter()
                .map(|s| {
                    let mut c = cfg.clone();
                    c.sweep = None;
                    let value = s.join("+");
                    c.source_domains = Some(s);
                    job(c, axis, value)
                })
                .collect())
        }
    }
}

pub fn sweep_rounds(cfg: &ExperimentConfig) -> Result<ResultTable> {
    run_jobs(&sweep_jobs(cfg, SweepAxis::Rounds)?)
}

pub fn sweep_client_splits(cfg: &ExperimentConfig) -> Result<ResultTable> {
    run_jobs(&sweep_jobs(cfg, SweepAxis::ClientsPerDomain)?)
}

pub fn sweep_sources(cfg: &ExperimentConfig) -> Result<ResultTable> {
    run_jobs(&sweep_jobs(cfg, SweepAxis::SourceSubset)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn subset_counts() {
        assert_eq!(subsets(&names(4), &[2, 3, 4]).len(), 11);
        assert_eq!(subsets(&names(4), &[1]).len(), 4);
        assert_eq!(subsets(&names(3), &[2])[0], vec!["s0", "s1"]);
    }

    #[test]
    fn round_budget_arithmetic() {
        let mut cfg = ExperimentConfig::default_synthetic();
        cfg.hyper.total_epochs = 100;
        let c = with_rounds(&cfg, 25).unwrap();
        assert_eq!((c.protocol.epochs_source, c.protocol.final_round_extra), (4, 0));
        let c = with_rounds(&cfg, 3).unwrap();
        let pc = c.protocol_config(0).unwrap();
        let per: Vec<usize> = (0..3).map(|r| pc.epochs_for_round(r).idd).collect();
        assert_eq!(per, vec![33, 33, 34]);
        let c = with_rounds(&cfg, 100).unwrap();
        assert_eq!(c.protocol.epochs_source, 1);
        assert!(with_rounds(&cfg, 101).is_err());
        assert!(with_rounds(&cfg, 0).is_err());
    }

    #[test]
    fn default_sweep_values() {
        let cfg = ExperimentConfig::default_synthetic();
        let jobs = sweep_jobs(&cfg, SweepAxis::SourceSubset).unwrap();
        assert_eq!(jobs.len(), 4);
        assert_eq!(jobs[3].value, "rot0+rot20+rot340");
        let jobs = sweep_jobs(&cfg, SweepAxis::Rounds).unwrap();
        assert_eq!(jobs.iter().map(|j| j.value.as_str()).collect::<Vec<_>>(), ["6", "15", "30", "60"]);
    }
}
