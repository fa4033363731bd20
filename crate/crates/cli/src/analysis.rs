//! Post-processing of a finished trajectory: entropy, identity checks,
//! hypotheses and the limit verdict.

use serde::{Deserialize, Serialize};
use tauflow_core::diagnostics::{
    classify_limit, gauss_bonnet_check, geometry_series, hypothesis_monitor, limit_tau, min_scalar_monitor,
    scalar_evolution_check, scalar_evolution_rate_check, traceless_growth_check, traceless_monitor,
    volume_identity_check, HypothesisBounds, HypothesisReport, LimitClassification,
};
use tauflow_core::entropy::{
    backward_conjugate_flow, dw_dt_check, mu_series, solve_mu, ConjugateOptions, ConjugatePair, MuResult, SolverOptions,
};
use tauflow_core::flow::{FlowKind, Trajectory};
use tauflow_core::series::TimeSeries;
use tauflow_core::Tau;

use crate::config::{RunConfig, Tolerances};

const DEFAULT_BOUND_FACTOR: f64 = 2.0;
const DEFAULT_GROWTH_FACTOR: f64 = 8.0;
const DEFAULT_MOSER_LAG: f64 = 0.5;

/// One line of the report. `passed` is `None` for informational entries and
/// for checks that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: Option<f64>,
    pub passed: Option<bool>,
    /// Series the value was read from.
    pub series: Option<String>,
    pub note: Option<String>,
}

impl CheckResult {
    fn at_most(name: &str, value: f64, tolerance: f64, series: Option<&str>) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance: Some(tolerance),
            passed: Some(value <= tolerance),
            series: series.map(Into::into),
            note: None,
        }
    }

    fn info(name: &str, value: f64, series: Option<&str>, note: &str) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance: None,
            passed: None,
            series: series.map(Into::into),
            note: Some(note.into()),
        }
    }

    fn skipped(name: &str, reason: impl std::fmt::Display) -> Self {
        Self {
            name: name.into(),
            value: f64::NAN,
            tolerance: None,
            passed: None,
            series: None,
            note: Some(format!("skipped: {reason}")),
        }
    }

    pub fn failed(&self) -> bool {
        self.passed == Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSummary {
    pub tau: f64,
    pub every: f64,
    pub solves: usize,
    pub first: f64,
    pub last: f64,
    /// Largest drop between consecutive samples, 0 for a nondecreasing series.
    pub max_decrease: f64,
    pub all_converged: bool,
    pub max_el_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateSummary {
    pub anchor_time: f64,
    pub window: f64,
    pub spacing: f64,
    pub max_normalization_error: f64,
    pub dw_max_abs_diff: f64,
    pub dw_min_value: f64,
    pub dw_cumulative_gap: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub series: Vec<TimeSeries>,
    pub checks: Vec<CheckResult>,
    pub hypotheses: HypothesisReport,
    pub classification: Option<LimitClassification>,
    pub mu: Option<MuSummary>,
    pub conjugate: Option<ConjugateSummary>,
    pub mu_results: Vec<(f64, MuResult)>,
    pub pair: Option<ConjugatePair>,
}

impl Analysis {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn series(&self, name: &str) -> Option<&TimeSeries> {
        self.series.iter().find(|s| s.name == name)
    }
}

pub fn hypothesis_bounds(cfg: &RunConfig, traj: &Trajectory) -> HypothesisBounds {
    let d = &cfg.diagnostics;
    let rel = HypothesisBounds::relative_to(&traj.samples[0].metric, d.bound_factor.unwrap_or(DEFAULT_BOUND_FACTOR));
    HypothesisBounds {
        curvature: d.curvature_bound.unwrap_or(rel.curvature),
        diameter: d.diameter_bound.unwrap_or(rel.diameter),
        volume_floor: d.volume_floor.unwrap_or(rel.volume_floor),
    }
}

/// τ used for µ: the configured one, the flow's, or `n/(2r)` at the end.
pub fn entropy_tau(cfg: &RunConfig, traj: &Trajectory) -> Option<Tau> {
    match cfg.entropy.tau {
        Some(t) => Tau::new(t).ok(),
        None => match traj.kind {
            FlowKind::TauFlow { tau } => Some(tau),
            _ => limit_tau(traj),
        },
    }
}

fn max_decrease(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

pub fn analyze(cfg: &RunConfig, traj: &Trajectory, tol: &Tolerances) -> Analysis {
    let mut series: Vec<TimeSeries> = Vec::new();
    let mut checks: Vec<CheckResult> = Vec::new();
    let tau_flow = matches!(traj.kind, FlowKind::TauFlow { .. });

    match geometry_series(traj) {
        Ok(s) => series.extend(s),
        Err(e) => checks.push(CheckResult::skipped("geometry", e)),
    }
    match gauss_bonnet_check(traj) {
        Ok(Some(s)) => {
            checks.push(CheckResult::at_most("gauss_bonnet", s.max_abs(), tol.gauss_bonnet, Some(&s.name)));
            series.push(s);
        }
        Ok(None) => {}
        Err(e) => checks.push(CheckResult::skipped("gauss_bonnet", e)),
    }
    match scalar_evolution_rate_check(traj) {
        Ok(s) => {
            checks.push(CheckResult::at_most("scalar_evolution", s.max_abs(), tol.identity, Some(&s.name)));
            series.push(s);
        }
        Err(e) => checks.push(CheckResult::skipped("scalar_evolution", e)),
    }
    match scalar_evolution_check(traj) {
        Ok(s) => {
            checks.push(CheckResult::info(
                "scalar_evolution_sampled",
                s.max_abs(),
                Some(&s.name),
                "time derivative from output samples; limited by the output interval",
            ));
            series.push(s);
        }
        Err(e) => checks.push(CheckResult::skipped("scalar_evolution_sampled", e)),
    }
    match volume_identity_check(traj) {
        Ok(s) => {
            checks.push(CheckResult::at_most("volume_identity", s.max_abs(), tol.identity, Some(&s.name)));
            series.push(s);
        }
        Err(e) => checks.push(CheckResult::skipped("volume_identity", e)),
    }
    match min_scalar_monitor(traj, tol.monotonicity) {
        Ok(m) => {
            let mut c = CheckResult::at_most(
                "min_scalar_sign",
                if m.violation.is_some() { 1.0 } else { 0.0 },
                0.0,
                Some(&m.series.name),
            );
            c.note = m.violation.map(|(t, what)| format!("t = {t}: {what}"));
            checks.push(c);
        }
        Err(e) => checks.push(CheckResult::skipped("min_scalar_sign", e)),
    }
    match traceless_monitor(traj, tol.inequality) {
        Ok(t) => {
            checks.push(CheckResult::at_most(
                "r_identity",
                t.r_identity.max_abs(),
                tol.identity,
                Some(&t.r_identity.name),
            ));
            let mut ineq = CheckResult::at_most(
                "r_inequality",
                t.r_inequality_violation(),
                tol.inequality,
                t.r_inequality.as_ref().map(|s| s.name.as_str()),
            );
            ineq.note = Some(format!("{} of {} samples gated out", t.gated_out, traj.samples.len()));
            checks.push(ineq);
            checks.push(CheckResult::info(
                "traceless_tail_share",
                t.tail_share(0.25),
                Some(&t.cumulative.name),
                "share of the integrated |T|² from the final quarter of the run",
            ));
            series.extend([t.c0, t.l2, t.cumulative, t.r_identity]);
            series.extend(t.r_inequality);
        }
        Err(e) => checks.push(CheckResult::skipped("r_identity", e)),
    }
    let growth = cfg.diagnostics.growth_factor.unwrap_or(DEFAULT_GROWTH_FACTOR);
    match traceless_growth_check(traj, growth, cfg.diagnostics.moser_lag.unwrap_or(DEFAULT_MOSER_LAG)) {
        Ok(g) => {
            checks.push(CheckResult::at_most(
                "traceless_growth",
                g.excess.max_abs(),
                tol.identity,
                Some(&g.excess.name),
            ));
            if let Some(c) = g.moser_constant {
                checks.push(CheckResult::info("moser_constant", c, None, "fitted sup |T| over lagged L² norm"));
            }
            series.push(g.excess);
        }
        Err(e) => checks.push(CheckResult::skipped("traceless_growth", e)),
    }

    let hypotheses = hypothesis_monitor(traj, hypothesis_bounds(cfg, traj));

    let opts =
        SolverOptions { tolerance: tol.solver, max_iterations: cfg.entropy.max_iterations, ..Default::default() };
    let tau = entropy_tau(cfg, traj);
    let mut mu_results: Vec<(f64, MuResult)> = Vec::new();
    let mut mu = None;
    if let (Some(every), Some(tau)) = (cfg.entropy.mu_every, tau) {
        match mu_series(traj, tau, every, &opts) {
            Ok(ms) => {
                let values = ms.series.values();
                let summary = MuSummary {
                    tau: tau.value(),
                    every,
                    solves: values.len(),
                    first: values[0],
                    last: *values.last().expect("at least one solve"),
                    max_decrease: max_decrease(&values),
                    all_converged: ms.results.iter().all(|r| r.1.converged),
                    max_el_residual: ms.results.iter().map(|r| r.1.el_residual_norm).fold(0.0, f64::max),
                };
                if tau_flow && cfg.entropy.tau.is_none() {
                    checks.push(CheckResult::at_most(
                        "mu_monotone",
                        summary.max_decrease,
                        tol.monotonicity,
                        Some("mu"),
                    ));
                } else {
                    checks.push(CheckResult::info(
                        "mu_monotone",
                        summary.max_decrease,
                        Some("mu"),
                        "µ at a fixed τ is only monotone along the τ-flow with the same τ",
                    ));
                }
                checks.push(CheckResult::at_most(
                    "mu_converged",
                    if summary.all_converged { 0.0 } else { 1.0 },
                    0.0,
                    Some("mu"),
                ));
                series.push(ms.series);
                mu_results = ms.results;
                mu = Some(summary);
            }
            Err(e) => checks.push(CheckResult::skipped("mu_monotone", e)),
        }
    }

    let mut conjugate = None;
    let mut pair = None;
    if let (Some(window), Some(tau), true) = (cfg.entropy.window, tau, tau_flow) {
        let end = traj.end_time();
        let anchor = match mu_results.last() {
            Some((t, r)) if (t - end).abs() <= 1e-9 * end.abs().max(1.0) => Ok(r.clone()),
            last => {
                let o = SolverOptions { initial: last.map(|(_, r)| r.minimizer_u.clone()), ..opts.clone() };
                solve_mu(&traj.last().metric, tau, &o)
            }
        };
        let copts = ConjugateOptions { spacing: cfg.entropy.spacing, interpolation: cfg.entropy.interpolation };
        let built = anchor.and_then(|a| backward_conjugate_flow(traj, end, &a, window, copts));
        match built.and_then(|p| dw_dt_check(&p).map(|d| (p, d))) {
            Ok((p, dw)) => {
                let errs = p.normalization_errors().unwrap_or_default();
                let (s, e): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
                let norm = TimeSeries::from_points("conjugate_normalization_error", "1", &s, &e)
                    .expect("backward samples increase in s");
                let summary = ConjugateSummary {
                    anchor_time: end,
                    window,
                    spacing: cfg.entropy.spacing,
                    max_normalization_error: norm.max_abs(),
                    dw_max_abs_diff: dw.max_abs_diff,
                    dw_min_value: dw.min_value(),
                    dw_cumulative_gap: dw.cumulative_gap,
                };
                checks.push(CheckResult::at_most(
                    "conjugate_normalization",
                    summary.max_normalization_error,
                    tol.conservation,
                    Some(&norm.name),
                ));
                checks.push(CheckResult::at_most(
                    "dw_agreement",
                    summary.dw_max_abs_diff,
                    tol.dw_agreement,
                    Some(&dw.finite_difference.name),
                ));
                checks.push(CheckResult::at_most(
                    "dw_nonnegative",
                    (-summary.dw_min_value).max(0.0),
                    tol.sign,
                    Some(&dw.integral.name),
                ));
                series.extend([norm, dw.w, dw.finite_difference, dw.integral]);
                conjugate = Some(summary);
                pair = Some(p);
            }
            Err(e) => checks.push(CheckResult::skipped("conjugate_normalization", e)),
        }
    }

    let classification = match classify_limit(traj, &mu_results, pair.as_ref(), &hypotheses, &tol.classify) {
        Ok(c) => Some(c),
        Err(e) => {
            checks.push(CheckResult::skipped("classification", e));
            None
        }
    };

    Analysis { series, checks, hypotheses, classification, mu, conjugate, mu_results, pair }
}
