use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::evaluate::MetricsRecord;
use crate::error::{Error, Result};
use crate::fabn::NormMode;
use crate::sensitivity::LayerCalibration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSeries {
    pub slot: usize,
    pub mean: f64,
    pub std: f64,
    /// `(batch index, group count)` for every batch where the slot partitioned.
    pub counts: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mode: NormMode,
    pub seed: u64,
    pub cluster_series: Vec<ClusterSeries>,
    pub sensitivity: Option<Vec<LayerCalibration>>,
}

impl Diagnostics {
    pub fn from_record(run: &MetricsRecord) -> Self {
        let cluster_series = run
            .cluster_summary
            .iter()
            .flatten()
            .map(|s| ClusterSeries {
                slot: s.slot,
                mean: s.mean,
                std: s.std,
                counts: run
                    .batches
                    .iter()
                    .filter_map(|b| b.clusters[s.slot].map(|r| (b.index, r)))
                    .collect(),
            })
            .collect();
        Diagnostics {
            mode: run.mode,
            seed: run.seed,
            cluster_series,
            sensitivity: run.sensitivity.clone(),
        }
    }
}

/// Sensitivity dump as CSV: `layer,raw_average,normalized_score,enabled`.
pub fn sensitivity_csv(layers: &[LayerCalibration]) -> String {
    let mut s = String::from("layer,raw_average,normalized_score,enabled\n");
    for l in layers {
        let _ = writeln!(s, "{},{:?},{:?},{}", l.layer, l.raw_average, l.normalized_score, l.enabled);
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.diagnostics.json` and, when calibrated,
/// `<stem>.sensitivity.csv`. Returns the written paths.
pub fn dump_diagnostics(run: &MetricsRecord, stem: &Path) -> Result<Vec<PathBuf>> {
    let diag = Diagnostics::from_record(run);
    let mut written = Vec::new();
    let json = with_suffix(stem, "diagnostics.json");
    write(&json, &serde_json::to_string_pretty(&diag)?)?;
    written.push(json);
    if let Some(layers) = &diag.sensitivity {
        let csv = with_suffix(stem, "sensitivity.csv");
        write(&csv, &sensitivity_csv(layers))?;
        written.push(csv);
    }
    Ok(written)
}

/// Writes the metrics document to `path` and per-batch latency to
/// `<path>.timing.csv`.
pub fn write_metrics(run: &MetricsRecord, path: &Path) -> Result<()> {
    write(path, &serde_json::to_string_pretty(run)?)?;
    let mut timing = String::from("batch,latency_ms\n");
    for (i, ms) in run.latency_ms.iter().enumerate() {
        let _ = writeln!(timing, "{i},{ms:.4}");
    }
    write(&with_suffix(path, "timing.csv"), &timing)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text)
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
