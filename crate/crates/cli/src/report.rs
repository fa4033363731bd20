//! Cross-run summaries read back from run directories.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tauflow_core::diagnostics::{einstein_volume_report, EinsteinVolumeEntry, Verdict};
use tauflow_core::geometry::MetricRecord;
use tauflow_core::Metric;

use crate::pipeline::{RunError, RunManifest, REPORT_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub config_hash: String,
    pub exit_code: i32,
    pub complete: bool,
    pub end_time: f64,
    pub verdict: Option<Verdict>,
    pub final_mu: Option<f64>,
    pub failed_checks: Vec<String>,
    /// Manifest-listed files whose digest no longer matches.
    pub modified_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRunReport {
    pub runs: Vec<RunSummary>,
    /// Einstein limits compared at Einstein constant 1.
    pub einstein_volumes: Vec<EinsteinVolumeEntry>,
}

impl CrossRunReport {
    pub fn intact(&self) -> bool {
        self.runs.iter().all(|r| r.modified_files.is_empty())
    }
}

pub fn summarize(dirs: &[PathBuf]) -> Result<CrossRunReport, RunError> {
    let mut runs = Vec::new();
    let mut limits = Vec::new();
    for dir in dirs {
        let (summary, limit) = summarize_one(dir)?;
        if let Some(m) = limit {
            limits.push((dir.display().to_string(), m));
        }
        runs.push(summary);
    }
    Ok(CrossRunReport { runs, einstein_volumes: einstein_volume_report(&limits, 1.0) })
}

fn summarize_one(dir: &Path) -> Result<(RunSummary, Option<Metric>), RunError> {
    let manifest = RunManifest::load(dir)?;
    let path = dir.join(REPORT_FILE);
    let bad = |message: String| RunError::Checkpoint { path: path.clone(), message };
    // Non-finite numbers are written as null, so the report is read loosely.
    let report: Value = serde_json::from_slice(&std::fs::read(&path).map_err(|e| bad(e.to_string()))?)
        .map_err(|e| bad(e.to_string()))?;
    let verdict: Option<Verdict> = serde_json::from_value(report["classification"]["verdict"].clone()).ok();
    let limit = match verdict {
        Some(Verdict::Einstein) => serde_json::from_value::<MetricRecord>(report["final_metric"].clone())
            .ok()
            .and_then(|r| Metric::from_record(&r).ok()),
        _ => None,
    };
    let failed_checks = report["checks"]
        .as_array()
        .map(|cs| {
            cs.iter()
                .filter(|c| c["passed"] == Value::Bool(false))
                .filter_map(|c| c["name"].as_str().map(String::from))
                .collect()
        })
        .unwrap_or_default();
    let summary = RunSummary {
        dir: dir.to_path_buf(),
        config_hash: manifest.config_hash.clone(),
        exit_code: manifest.exit_code,
        complete: manifest.complete,
        end_time: report["end_time"].as_f64().unwrap_or(f64::NAN),
        verdict,
        final_mu: report["mu"]["last"].as_f64(),
        failed_checks,
        modified_files: manifest.mismatches(dir),
    };
    Ok((summary, limit))
}
