//! Config-driven experiments: repeated seeded runs, study sweeps, reports.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod report;
pub mod sweep;

pub use config::{DomainEntry, DomainKind, ExperimentConfig, SweepAxis, SweepSpec};
pub use experiment::{baseline_source_only, run_experiment, run_jobs, Job, ResultRow, ResultTable, RunTrace, Summary, SummaryRow};
pub use report::{emit_report, load_report, read_results};
pub use sweep::{sweep_client_splits, sweep_jobs, sweep_rounds, sweep_sources};

/// Environment variable holding the worker-thread count for parallel runs.
pub const WORKERS_ENV: &str = "FACT_WORKERS";

/// Installs a global rayon pool sized from [`WORKERS_ENV`], if set. Returns
/// the configured count. Calling it more than once is harmless.
pub fn configure_workers() -> crate::Result<Option<usize>> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| crate::Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{raw}'")))?;
    // Fails only when a pool already exists, which is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}
