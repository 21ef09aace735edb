use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fact_core::harness::{self, emit_report, load_report, run_jobs, sweep_jobs, ExperimentConfig, Job, ResultTable, SweepAxis, SweepSpec};
use fact_core::Error;

/// Federated adversarial cross training experiments.
#[derive(Parser, Debug)]
#[command(
    name = "fact",
    version,
    about,
    after_help = "Worker threads: set FACT_WORKERS (default: all cores)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunOpts {
    /// Experiment config (TOML).
    config: PathBuf,
    /// First seed; replaces the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds to run.
    #[arg(long)]
    repeats: Option<usize>,
    /// fact | fact-nf | source-only
    #[arg(long)]
    variant: Option<String>,
    /// Output directory for CSVs and plots.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one config over its seeds.
    Run(RunOpts),
    /// Run a study sweep.
    Sweep {
        #[command(flatten)]
        opts: RunOpts,
        /// rounds | clients | sources
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (round counts, split factors or subset sizes).
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Rebuild summary and plots from a results.csv.
    Report {
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// An error tagged with the CLI stage it came from.
struct Failure {
    stage: &'static str,
    error: Error,
}

fn at(stage: &'static str) -> impl FnOnce(Error) -> Failure {
    move |error| Failure { stage, error }
}

fn load_config(opts: &RunOpts) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(v) = &opts.variant {
        cfg.variant = v.clone();
    }
    let first = opts.seed.unwrap_or(cfg.seeds[0]);
    match (opts.seed, opts.repeats) {
        (_, Some(0)) => return Err(Error::Config("--repeats must be at least 1".into())),
        (_, Some(n)) => cfg.seeds = (first..first + n as u64).collect(),
        (Some(s), None) => cfg.seeds = vec![s],
        (None, None) => {}
    }
    cfg.repeats = None;
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(table: &ResultTable) {
    println!("{:<40} {:>5} {:>8} {:>8}", "label", "runs", "mean", "std");
    for s in table.summary() {
        println!(
            "{:<40} {:>5} {:>8.4} {:>8.4}",
            s.label, s.accuracy.runs, s.accuracy.mean, s.accuracy.std
        );
    }
}

fn finish(table: &ResultTable, out: &PathBuf) -> Result<(), Failure> {
    emit_report(table, out).map_err(at("report"))?;
    print_summary(table);
    println!("wrote {}", out.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    harness::configure_workers().map_err(at("config"))?;
    match cli.command {
        Command::Run(opts) => {
            let cfg = load_config(&opts).map_err(at("config"))?;
            let table = run_jobs(&[Job::plain(cfg)]).map_err(at("run"))?;
            finish(&table, &opts.out)
        }
        Command::Sweep { opts, axis, values } => {
            let mut cfg = load_config(&opts).map_err(at("config"))?;
            let axis: SweepAxis = axis.parse().map_err(at("config"))?;
            if !values.is_empty() {
                cfg.sweep = Some(SweepSpec { axis, values });
            }
            let jobs = sweep_jobs(&cfg, axis).map_err(at("config"))?;
            let table = run_jobs(&jobs).map_err(at("sweep"))?;
            finish(&table, &opts.out)
        }
        Command::Report { results, out } => {
            let table = load_report(&results).map_err(at("load"))?;
            finish(&table, &out)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: [{}] {}", f.stage, f.error);
            let mut src = std::error::Error::source(&f.error);
            while let Some(e) = src {
                eprintln!("  caused by: {e}");
                src = e.source();
            }
            ExitCode::FAILURE
        }
    }
}
