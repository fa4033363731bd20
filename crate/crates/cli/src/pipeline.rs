//! `run` and `resume`: evolve, analyze, persist.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};
use tauflow_core::diagnostics::{HypothesisReport, LimitClassification};
use tauflow_core::flow::{evolve, extend, FlowError, FlowKind, FlowState, StepControl, Termination, Trajectory};
use tauflow_core::geometry::MetricRecord;
use tauflow_core::Backend;
use thiserror::Error;

use crate::analysis::{analyze, Analysis, CheckResult, ConjugateSummary, MuSummary};
use crate::artifacts::{sha256_hex, ArtifactWriter, FileEntry};
use crate::config::{ConfigError, RunConfig, ToleranceProfile, Tolerances};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Clean,
    ConfigError,
    HypothesisViolation,
    Singularity,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Clean => 0,
            ExitStatus::ConfigError => 1,
            ExitStatus::HypothesisViolation => 2,
            ExitStatus::Singularity => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("artifacts: {0}")]
    Io(#[from] io::Error),
}

/// Everything needed to continue a run sample for sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config: RunConfig,
    pub profile: ToleranceProfile,
    pub step_control: StepControl,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub profile: ToleranceProfile,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub termination: Termination,
    pub complete: bool,
    pub exit_code: i32,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(|e| checkpoint_error(&path, e))?;
        serde_json::from_slice(&text).map_err(|e| checkpoint_error(&path, e))
    }

    pub fn entry(&self, rel: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == rel)
    }

    /// Files whose content no longer matches the recorded digest.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| fs::read(dir.join(&f.path)).map_or(true, |b| sha256_hex(&b) != f.sha256))
            .map(|f| f.path.clone())
            .collect()
    }
}

/// Contents of `report.json`. Non-finite values serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub backend: Backend,
    pub flow: FlowKind,
    pub profile: ToleranceProfile,
    pub tolerances: Tolerances,
    pub termination: Termination,
    pub complete: bool,
    pub exit_code: i32,
    pub samples: usize,
    pub end_time: f64,
    pub projection_applications: u64,
    pub hypotheses: HypothesisReport,
    pub classification: Option<LimitClassification>,
    pub mu: Option<MuSummary>,
    pub conjugate: Option<ConjugateSummary>,
    pub checks: Vec<CheckResult>,
    pub final_metric: MetricRecord,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub dir: PathBuf,
    pub report: RunReport,
    pub analysis: Analysis,
    pub trajectory: Trajectory,
}

fn checkpoint_error(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Checkpoint { path: path.to_path_buf(), message: e.to_string() }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn status_of(traj: &Trajectory, hypotheses: &HypothesisReport) -> ExitStatus {
    if !traj.is_complete() {
        ExitStatus::Singularity
    } else if !hypotheses.all_ok() {
        ExitStatus::HypothesisViolation
    } else {
        ExitStatus::Clean
    }
}

/// Evolves the configured flow and writes every artifact under `out`.
pub fn run(cfg: &RunConfig, out: &Path, profile: ToleranceProfile) -> Result<RunOutcome, RunError> {
    let started = (unix_now(), Instant::now());
    cfg.validate()?;
    let m0 = cfg.initial_metric()?;
    let ctl = cfg.step_control(m0.volume());
    info!("evolving {:?} for {} on {:?}", cfg.flow.kind, cfg.flow.horizon, m0.backend());
    let traj = evolve(&FlowState::new(m0, 0.0), cfg.flow_kind(), cfg.flow.horizon, &ctl, cfg.flow.output_interval)?;
    finish(cfg, ctl, traj, out, profile, started)
}

/// Reads a checkpoint after checking it against the manifest next to it.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RunError> {
    let bytes = fs::read(path).map_err(|e| checkpoint_error(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let manifest = RunManifest::load(dir)?;
    let rel = path.file_name().and_then(|n| n.to_str()).unwrap_or(CHECKPOINT_FILE);
    let entry = manifest.entry(rel).ok_or_else(|| checkpoint_error(path, "not listed in the manifest"))?;
    let digest = sha256_hex(&bytes);
    if digest != entry.sha256 {
        return Err(checkpoint_error(path, format!("hash {digest} does not match the manifest ({})", entry.sha256)));
    }
    let cp: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| checkpoint_error(path, e))?;
    if cp.config.hash() != cp.config_hash || cp.config_hash != manifest.config_hash {
        return Err(checkpoint_error(path, "config hash does not match the stored config"));
    }
    Ok(cp)
}

/// Continues the run stored in `checkpoint` by `extra_horizon` and rewrites
/// the artifacts in `out`, by default the checkpoint's directory.
pub fn resume(
    checkpoint: &Path,
    extra_horizon: f64,
    out: Option<&Path>,
    profile: Option<ToleranceProfile>,
) -> Result<RunOutcome, RunError> {
    let started = (unix_now(), Instant::now());
    let cp = load_checkpoint(checkpoint)?;
    if !(extra_horizon >= 0.0 && extra_horizon.is_finite()) {
        return Err(ConfigError::Invalid {
            field: "extra_horizon",
            message: format!("must be non-negative, got {extra_horizon}"),
        }
        .into());
    }
    let mut traj = cp.trajectory;
    let mut cfg = cp.config;
    if extra_horizon > 0.0 {
        extend(&mut traj, extra_horizon, &cp.step_control)?;
        cfg.flow.horizon += extra_horizon;
    }
    cfg.validate()?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    finish(&cfg, cp.step_control, traj, &dir, profile.unwrap_or(cp.profile), started)
}

/// Deletes the files listed by a previous manifest in `dir`.
fn clear_previous(dir: &Path) {
    if let Ok(old) = RunManifest::load(dir) {
        for f in &old.files {
            let _ = fs::remove_file(dir.join(&f.path));
        }
    }
}

fn finish(
    cfg: &RunConfig,
    ctl: StepControl,
    traj: Trajectory,
    out: &Path,
    profile: ToleranceProfile,
    started: (f64, Instant),
) -> Result<RunOutcome, RunError> {
    if let Termination::Singularity { t, reason } = &traj.termination {
        info!("run stopped at t = {t}: {reason}");
    }
    let tol = cfg.tolerances(profile);
    let analysis = analyze(cfg, &traj, &tol);
    let status = status_of(&traj, &analysis.hypotheses);
    let config_hash = cfg.hash();

    clear_previous(out);
    let mut w = ArtifactWriter::create(out)?;
    w.write(CONFIG_FILE, cfg.to_toml().as_bytes())?;
    for s in &analysis.series {
        w.write_series(s)?;
    }
    let checks = analysis
        .checks
        .iter()
        .cloned()
        .map(|mut c| {
            c.series = c.series.map(|name| format!("series/{name}.csv"));
            c
        })
        .collect();
    let report = RunReport {
        config_hash: config_hash.clone(),
        backend: traj.samples[0].metric.backend(),
        flow: traj.kind,
        profile,
        tolerances: tol,
        termination: traj.termination.clone(),
        complete: traj.is_complete(),
        exit_code: status.code(),
        samples: traj.samples.len(),
        end_time: traj.end_time(),
        projection_applications: traj.projection.applications,
        hypotheses: analysis.hypotheses.clone(),
        classification: analysis.classification.clone(),
        mu: analysis.mu.clone(),
        conjugate: analysis.conjugate.clone(),
        checks,
        final_metric: traj.last().metric.to_record(),
    };
    w.write_json(REPORT_FILE, &report)?;
    let cp = Checkpoint {
        config_hash: config_hash.clone(),
        config: cfg.clone(),
        profile,
        step_control: ctl,
        trajectory: traj,
    };
    w.write_json(CHECKPOINT_FILE, &cp)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash,
        profile,
        started_unix: started.0,
        finished_unix: unix_now(),
        wall_seconds: started.1.elapsed().as_secs_f64(),
        termination: report.termination.clone(),
        complete: report.complete,
        exit_code: status.code(),
        files: w.files().to_vec(),
    };
    w.write_json(MANIFEST_FILE, &manifest)?;
    info!("wrote {} files to {}", manifest.files.len(), out.display());
    Ok(RunOutcome { status, dir: out.to_path_buf(), report, analysis, trajectory: cp.trajectory })
}
