//! Round history as CSV.

use std::io::{Read, Write};

use super::RoundRecord;
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 8] = [
    "round",
    "pair",
    "src_loss_1",
    "src_loss_2",
    "ft_loss_1",
    "ft_loss_2",
    "idd",
    "target_acc",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

/// Writes one row per round. Pairs are written as `a-b`; absent values are
/// empty fields. Floats use the shortest representation that round-trips.
pub fn write_history<W: Write>(out: W, history: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in history {
        let ft = r.finetune_losses;
        w.write_record([
            r.round.to_string(),
            format!("{}-{}", r.pair.0, r.pair.1),
            r.source_losses[0].to_string(),
            r.source_losses[1].to_string(),
            opt(ft.map(|f| f[0])),
            opt(ft.map(|f| f[1])),
            opt(r.idd),
            opt(r.target_accuracy),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))
}

/// Reads rows written by [`write_history`]. Per-head accuracies are not part
/// of the file and come back as `None`.
pub fn read_history<R: Read>(input: R) -> Result<Vec<RoundRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(Error::Serde(format!("unexpected history header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Serde(format!("bad number '{s}'"))) };
    let maybe = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let (a, b) = rec[1]
            .split_once('-')
            .ok_or_else(|| Error::Serde(format!("bad pair '{}'", &rec[1])))?;
        let id = |s: &str| s.parse().map_err(|_| Error::Serde(format!("bad client id '{s}'")));
        let ft = match (maybe(&rec[4])?, maybe(&rec[5])?) {
            (Some(x), Some(y)) => Some([x, y]),
            _ => None,
        };
        out.push(RoundRecord {
            round: rec[0].parse().map_err(|_| Error::Serde(format!("bad round '{}'", &rec[0])))?,
            pair: (id(a)?, id(b)?),
            source_losses: [num(&rec[2])?, num(&rec[3])?],
            finetune_losses: ft,
            idd: maybe(&rec[6])?,
            target_accuracy: maybe(&rec[7])?,
            head_accuracies: None,
        });
    }
    Ok(out)
}
