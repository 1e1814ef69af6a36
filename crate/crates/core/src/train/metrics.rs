//! Per-interval metric rows and their CSV log.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row per evaluation interval. Training columns average the steps since
/// the previous row; validation columns come from fixed held-out batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub kl_weight: f64,
    pub lr: f64,
    pub train_rec_nll: f64,
    pub train_kl: f64,
    pub train_aux: f64,
    pub train_loss: f64,
    pub valid_rec_nll: f64,
    pub valid_kl: f64,
    pub valid_aux: f64,
    /// Validation reconstruction in bits per character.
    pub bpc: f64,
    /// Validation KL in bits per character.
    pub kl_bpc: f64,
    /// Validation KL in nats per character.
    pub kl_per_char: f64,
    /// `bpc + kl_bpc`.
    pub bound_bpc: f64,
    /// Seconds since the run started; the only nondeterministic column.
    pub wallclock: f64,
}

pub const WALLCLOCK_COLUMN: &str = "wallclock";

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(header())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn header() -> Vec<&'static str> {
    vec![
        "step",
        "kl_weight",
        "lr",
        "train_rec_nll",
        "train_kl",
        "train_aux",
        "train_loss",
        "valid_rec_nll",
        "valid_kl",
        "valid_aux",
        "bpc",
        "kl_bpc",
        "kl_per_char",
        "bound_bpc",
        WALLCLOCK_COLUMN,
    ]
}

/// CSV text with the wallclock column removed, for reproducibility checks.
pub fn strip_wallclock(csv_text: &str) -> Result<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = r.headers()?.clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| &headers[i] != WALLCLOCK_COLUMN).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(keep.iter().map(|&i| &headers[i]))?;
    for rec in r.records() {
        let rec = rec?;
        w.write_record(keep.iter().map(|&i| &rec[i]))?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is UTF-8"))
}

/// Curve data: bpc per row with its running minimum next to the raw value.
pub fn curves_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "bpc", "bpc_monotone", "kl_bpc", "bound_bpc", "train_loss"])?;
    let mut best = f64::INFINITY;
    for r in rows {
        best = best.min(r.bpc);
        w.write_record([
            r.step.to_string(),
            r.bpc.to_string(),
            best.to_string(),
            r.kl_bpc.to_string(),
            r.bound_bpc.to_string(),
            r.train_loss.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, bpc: f64) -> MetricRow {
        MetricRow {
            step,
            kl_weight: 0.5,
            lr: 1e-3,
            train_rec_nll: 1.0,
            train_kl: 0.1,
            train_aux: 0.0,
            train_loss: 1.05,
            valid_rec_nll: 1.1,
            valid_kl: 0.2,
            valid_aux: 0.0,
            bpc,
            kl_bpc: 0.01,
            kl_per_char: 0.007,
            bound_bpc: bpc + 0.01,
            wallclock: step as f64 * 0.37,
        }
    }

    #[test]
    fn log_round_trips_and_header_matches() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let rows = vec![row(100, 2.0), row(200, 1.5)];
        write_metrics(&p, &rows).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), header().join(","));
    }

    #[test]
    fn wallclock_is_stripped() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let mut other = row(100, 2.0);
        other.wallclock = 99.0;
        write_metrics(&a, &[row(100, 2.0)]).unwrap();
        write_metrics(&b, &[other]).unwrap();
        let (ta, tb) = (std::fs::read_to_string(a).unwrap(), std::fs::read_to_string(b).unwrap());
        assert_ne!(ta, tb);
        assert_eq!(strip_wallclock(&ta).unwrap(), strip_wallclock(&tb).unwrap());
        assert!(!strip_wallclock(&ta).unwrap().contains("wallclock"));
    }

    #[test]
    fn curves_keep_raw_and_monotone() {
        let text = curves_csv(&[row(1, 2.0), row(2, 2.5), row(3, 1.0)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[2].starts_with("2,2.5,2,"));
        assert!(lines[3].starts_with("3,1,1,"));
    }
}
