//! CSV tables and SVG plots for finished experiments.
//!
//! `results.csv` holds only deterministic columns, so identical configs and
//! seeds give byte-identical files; wall times go to `timings.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::{ResultRow, ResultTable, RunTrace};
use super::plot::{bar_chart, line_chart, Series};
use crate::error::{Error, Result};
use crate::federation::history::{read_history, write_history};

pub const RESULT_COLUMNS: [&str; 11] = [
    "fingerprint",
    "label",
    "variant",
    "axis",
    "value",
    "seed",
    "n_source_clients",
    "target_acc",
    "best_idd",
    "selected_round",
    "best_round_acc",
];

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "fingerprint",
    "label",
    "variant",
    "axis",
    "value",
    "runs",
    "mean_acc",
    "std_acc",
    "mean_best_idd",
];

pub const TIMING_COLUMNS: [&str; 4] = ["fingerprint", "label", "seed", "wall_time_s"];

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn trace_stem(t: &RunTrace) -> String {
    format!("{}_s{}", t.fingerprint, t.seed)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RESULT_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.fingerprint.clone(),
            r.label.clone(),
            r.variant.clone(),
            r.axis.clone(),
            r.value.clone(),
            r.seed.to_string(),
            r.n_source_clients.to_string(),
            r.target_acc.to_string(),
            opt(r.best_idd),
            r.selected_round.to_string(),
            r.best_round_acc.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `results.csv`; wall times come back as 0.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = csv::Reader::from_reader(file);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(Error::Serde(format!("{}: unexpected header {header:?}", path.display())));
    }
    let bad = |col: &str, v: &str| Error::Serde(format!("{}: bad {col} '{v}'", path.display()));
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(RESULT_COLUMNS[i], &rec[i])) };
        let u = |i: usize| -> Result<u64> { rec[i].parse().map_err(|_| bad(RESULT_COLUMNS[i], &rec[i])) };
        let target_acc = f(7)?;
        if !(0.0..=1.0).contains(&target_acc) {
            return Err(bad("target_acc", &rec[7]));
        }
        rows.push(ResultRow {
            fingerprint: rec[0].to_string(),
            label: rec[1].to_string(),
            variant: rec[2].to_string(),
            axis: rec[3].to_string(),
            value: rec[4].to_string(),
            seed: u(5)?,
            n_source_clients: u(6)? as usize,
            target_acc,
            best_idd: if rec[8].is_empty() { None } else { Some(f(8)?) },
            selected_round: u(9)? as usize,
            best_round_acc: f(10)?,
            wall_time_s: 0.0,
        });
    }
    Ok(rows)
}

/// Reloads a report directory: results, plus wall times and histories when
/// the sibling `timings.csv` and `history/` exist.
pub fn load_report(results_csv: &Path) -> Result<ResultTable> {
    let mut rows = read_results(results_csv)?;
    let dir = results_csv.parent().unwrap_or(Path::new("."));
    let timings = dir.join("timings.csv");
    if timings.exists() {
        let file = fs::File::open(&timings).map_err(|e| Error::io(&timings, e))?;
        // Rows line up one-to-one with results.csv.
        for (rec, r) in csv::Reader::from_reader(file).records().zip(rows.iter_mut()) {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != TIMING_COLUMNS.len() || rec[0] != r.fingerprint || rec[1] != r.label || rec[2] != r.seed.to_string() {
                return Err(Error::Serde(format!("{} does not match results.csv", timings.display())));
            }
            r.wall_time_s = rec[3].parse().map_err(|_| Error::Serde(format!("bad wall time '{}'", &rec[3])))?;
        }
    }
    let mut traces = Vec::new();
    for r in &rows {
        let path = dir.join("history").join(format!("{}_s{}.csv", r.fingerprint, r.seed));
        if path.exists() {
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            traces.push(RunTrace {
                fingerprint: r.fingerprint.clone(),
                label: r.label.clone(),
                seed: r.seed,
                history: read_history(file)?,
            });
        }
    }
    Ok(ResultTable { rows, traces })
}

fn accuracy_plots(table: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>> {
    let summary = table.summary();
    let mut written = Vec::new();
    let mut axes: Vec<&str> = Vec::new();
    for s in &summary {
        if !axes.contains(&s.axis.as_str()) {
            axes.push(&s.axis);
        }
    }
    for axis in axes {
        let group: Vec<_> = summary.iter().filter(|s| s.axis == axis).collect();
        let numeric = !axis.is_empty() && group.iter().all(|s| s.value.parse::<f64>().is_ok());
        let (name, svg) = if numeric {
            let mut variants: Vec<&str> = Vec::new();
            for s in &group {
                if !variants.contains(&s.variant.as_str()) {
                    variants.push(&s.variant);
                }
            }
            let series: Vec<Series> = variants
                .iter()
                .map(|v| {
                    let mut points: Vec<(f64, f64, f64)> = group
                        .iter()
                        .filter(|s| s.variant == *v)
                        .map(|s| (s.value.parse().expect("numeric"), s.accuracy.mean, s.accuracy.std))
                        .collect();
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Series {
                        name: v.to_string(),
                        points,
                    }
                })
                .collect();
            (
                format!("accuracy_{axis}.svg"),
                line_chart(&format!("Target accuracy vs {axis}"), axis, "target accuracy", &series, None),
            )
        } else {
            let bars: Vec<(String, f64, f64)> = group
                .iter()
                .map(|s| {
                    let label = if s.value.is_empty() { s.label.clone() } else { s.value.clone() };
                    (label, s.accuracy.mean, s.accuracy.std)
                })
                .collect();
            let name = if axis.is_empty() {
                "accuracy.svg".to_string()
            } else {
                format!("accuracy_{axis}.svg")
            };
            (name, bar_chart("Target accuracy (mean ± std)", "target accuracy", &bars))
        };
        let path = dir.join(name);
        write_text(&path, &svg)?;
        written.push(path);
    }
    Ok(written)
}

fn trace_plot(t: &RunTrace) -> String {
    let idd: Vec<(f64, f64, f64)> = t.history.iter().filter_map(|r| r.idd.map(|v| (r.round as f64, v, 0.0))).collect();
    let title = format!("{} seed {}", t.label, t.seed);
    if idd.is_empty() {
        let acc = t
            .history
            .iter()
            .filter_map(|r| r.target_accuracy.map(|v| (r.round as f64, v, 0.0)))
            .collect();
        let s = Series {
            name: "target acc".into(),
            points: acc,
        };
        return line_chart(&format!("{title} (no IDD recorded)"), "round", "target accuracy", &[s], None);
    }
    line_chart(
        &title,
        "round",
        "IDD",
        &[Series {
            name: "IDD".into(),
            points: idd,
        }],
        None,
    )
}

/// Writes `results.csv`, `timings.csv`, `summary.csv`, accuracy plots, and
/// per-run `history/*.csv` and `traces/*.svg`. Returns the files written.
pub fn emit_report(table: &ResultTable, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    write_results(&path, &table.rows)?;
    written.push(path);

    let path = dir.join("timings.csv");
    let mut w = writer(&path)?;
    w.write_record(TIMING_COLUMNS).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            r.fingerprint.clone(),
            r.label.clone(),
            r.seed.to_string(),
            r.wall_time_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("summary.csv");
    let mut w = writer(&path)?;
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for s in table.summary() {
        w.write_record([
            s.fingerprint,
            s.label,
            s.variant,
            s.axis,
            s.value,
            s.accuracy.runs.to_string(),
            s.accuracy.mean.to_string(),
            s.accuracy.std.to_string(),
            opt(s.mean_best_idd),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    if !table.rows.is_empty() {
        written.extend(accuracy_plots(table, dir)?);
    }

    if !table.traces.is_empty() {
        let (hist, traces) = (dir.join("history"), dir.join("traces"));
        for d in [&hist, &traces] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for t in &table.traces {
            let path = hist.join(format!("{}.csv", trace_stem(t)));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_history(file, &t.history)?;
            written.push(path);
            let path = traces.join(format!("idd_{}.svg", trace_stem(t)));
            write_text(&path, &trace_plot(t))?;
            written.push(path);
        }
    }
    Ok(written)
}
