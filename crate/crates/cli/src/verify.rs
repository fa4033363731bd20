//! Two-resolution identity suite on a short horizon.

use serde::{Deserialize, Serialize};
use tauflow_core::flow::{evolve, FlowState, Trajectory};
use tauflow_core::Metric;

use crate::analysis::{analyze, Analysis};
use crate::config::{RunConfig, ToleranceProfile, Tolerances};
use crate::pipeline::RunError;

/// Residuals at or below this are rounding, whatever the resolution.
pub const ROUNDING_FLOOR: f64 = 1e-11;
/// Least acceptable error reduction when the output interval halves.
pub const MIN_REDUCTION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyLine {
    pub config: String,
    pub check: String,
    /// `coarse`, `fine` or `both`.
    pub resolution: String,
    pub value: f64,
    pub bound: Bound,
    pub threshold: f64,
    pub passed: bool,
}

impl VerifyLine {
    pub fn render(&self) -> String {
        let op = match self.bound {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        format!(
            "{} {} {} [{}] {:.3e} {} {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.config,
            self.check,
            self.resolution,
            self.value,
            op,
            self.threshold
        )
    }
}

/// Config cut down to `verify.horizon`, with the entropy cadence and window
/// clipped to fit.
pub fn short_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    let dt_out = c.flow.output_interval;
    let wanted = if cfg.flow.horizon > 0.0 { cfg.verify.horizon.min(cfg.flow.horizon) } else { cfg.verify.horizon };
    let steps = (wanted / dt_out).round().max(2.0);
    c.flow.horizon = steps * dt_out;
    if let Some(every) = c.entropy.mu_every {
        let k = (every.min(c.flow.horizon / 2.0) / dt_out).floor().max(1.0);
        c.entropy.mu_every = Some(k * dt_out);
    }
    if let Some(w) = c.entropy.window {
        let k = (w.min(0.5 * c.flow.horizon) / c.entropy.spacing).floor().max(1.0);
        c.entropy.window = Some(k * c.entropy.spacing);
    }
    c
}

struct Resolved {
    traj: Trajectory,
    analysis: Analysis,
}

fn evaluate(cfg: &RunConfig, tol: &Tolerances) -> Result<Resolved, RunError> {
    cfg.validate()?;
    let m0 = cfg.initial_metric()?;
    let ctl = cfg.step_control(m0.volume());
    let traj = evolve(&FlowState::new(m0, 0.0), cfg.flow_kind(), cfg.flow.horizon, &ctl, cfg.flow.output_interval)?;
    let analysis = analyze(cfg, &traj, tol);
    Ok(Resolved { traj, analysis })
}

/// Largest difference of the final unknowns at the points both runs share.
fn solution_gap(coarse: &Metric, fine: &Metric) -> f64 {
    let (a, b) = (coarse.unknowns(), fine.unknowns());
    let stride = if b.len() > a.len() { (b.len() - 1) / (a.len() - 1) } else { 1 };
    a.iter().enumerate().map(|(i, x)| (x - b[i * stride]).abs() / b[i * stride].abs().max(1.0)).fold(0.0, f64::max)
}

pub fn verify(cfg: &RunConfig, label: &str, profile: ToleranceProfile) -> Result<Vec<VerifyLine>, RunError> {
    let short = short_config(cfg);
    let tol = cfg.tolerances(profile);
    let coarse = evaluate(&short, &tol)?;
    let fine = evaluate(&short.refined(), &tol)?;
    let mut lines = Vec::new();
    let mut push = |check: &str, resolution: &str, value: f64, bound: Bound, threshold: f64, passed: bool| {
        lines.push(VerifyLine {
            config: label.into(),
            check: check.into(),
            resolution: resolution.into(),
            value,
            bound,
            threshold,
            passed,
        })
    };
    for (name, r) in [("coarse", &coarse), ("fine", &fine)] {
        push("completed", name, if r.traj.is_complete() { 0.0 } else { 1.0 }, Bound::AtMost, 0.0, r.traj.is_complete());
        let hyp = r.analysis.hypotheses.all_ok();
        push("hypotheses", name, if hyp { 0.0 } else { 1.0 }, Bound::AtMost, 0.0, hyp);
        for c in &r.analysis.checks {
            if let (Some(passed), Some(t)) = (c.passed, c.tolerance) {
                push(&c.name, name, c.value, Bound::AtMost, t, passed);
            }
        }
    }
    let gap = solution_gap(&coarse.traj.last().metric, &fine.traj.last().metric);
    push("grid_convergence", "both", gap, Bound::AtMost, tol.grid_convergence, gap <= tol.grid_convergence);
    for name in ["volume_identity", "r_identity"] {
        let (Some(a), Some(b)) = (coarse.analysis.check(name), fine.analysis.check(name)) else { continue };
        if !(a.value.is_finite() && b.value.is_finite()) {
            continue;
        }
        let check = format!("{name}_order");
        if b.value <= ROUNDING_FLOOR {
            push(&check, "fine", b.value, Bound::AtMost, ROUNDING_FLOOR, true);
        } else {
            let ratio = a.value / b.value;
            push(&check, "both", ratio, Bound::AtLeast, MIN_REDUCTION, ratio >= MIN_REDUCTION);
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_config_fits_the_horizon() {
        let cfg = RunConfig::from_toml(
            r#"
[geometry]
backend = "axisymmetric_s2"
intervals = 32
[flow]
kind = "tau"
tau = 0.5
dt = 1e-4
horizon = 2.0
output_interval = 0.005
[entropy]
mu_every = 0.1
window = 0.5
[verify]
horizon = 0.1
"#,
        )
        .unwrap();
        let s = short_config(&cfg);
        s.validate().unwrap();
        s.refined().validate().unwrap();
        assert!((s.flow.horizon - 0.1).abs() < 1e-12);
        assert!((s.entropy.window.unwrap() - 0.05).abs() < 1e-12);
        assert!((s.entropy.mu_every.unwrap() - 0.05).abs() < 1e-12);
    }
}
