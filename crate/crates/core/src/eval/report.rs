//! Per-scene metric rows written as CSV or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{metrics, ConfusionCounts, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene: String,
    pub samples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
}

impl ReportRow {
    pub fn new(scene: impl Into<String>, samples: usize, c: ConfusionCounts) -> Result<Self> {
        let m = metrics(&c)?;
        Ok(Self {
            scene: scene.into(),
            samples,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            precision_degenerate: m.precision_degenerate,
            recall_degenerate: m.recall_degenerate,
        })
    }
}

/// Writes serializable rows with a header line.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}
