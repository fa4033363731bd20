//! Identity checks, hypothesis monitoring and limit classification over
//! finished trajectories.
//!
//! Time derivatives of monitored quantities are centered differences on the
//! output grid with second-order one-sided stencils at the ends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{soliton_residual, ConjugatePair, EntropyError, MuResult};
use crate::flow::{unknown_rates, FlowKind, Trajectory};
use crate::geometry::{Backend, GeometryError, Metric, Tau};
pub use crate::series::TimeSeries;
use crate::series::{uniform_derivative, SeriesError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("trajectory has {0} samples; at least 3 are needed for time derivatives")]
    TooShort(usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

type Result<T> = std::result::Result<T, DiagnosticsError>;

fn need_derivatives(traj: &Trajectory) -> Result<()> {
    if traj.samples.len() < 3 {
        return Err(DiagnosticsError::TooShort(traj.samples.len()));
    }
    Ok(())
}

fn per_sample(traj: &Trajectory, f: impl Fn(&Metric) -> f64) -> Vec<f64> {
    traj.samples.iter().map(|s| f(&s.metric)).collect()
}

fn series(name: &str, units: &str, traj: &Trajectory, values: &[f64]) -> Result<TimeSeries> {
    Ok(TimeSeries::from_points(name, units, &traj.times(), values)?)
}

/// `(1/Vol) ∫|T|² dV` style helper: `∫|T|² dV`.
fn traceless_l2(m: &Metric) -> f64 {
    let t = m.tensor_norm(&m.traceless_ricci()).expect("same backend");
    m.integrate(&t).expect("same backend")
}

fn traceless_c0(m: &Metric) -> f64 {
    m.tensor_norm(&m.traceless_ricci()).expect("same backend").max().sqrt()
}

/// Geometry along the run: `max|Rm|`, diameter, volume, `R̂ = min R` and `r`.
pub fn geometry_series(traj: &Trajectory) -> Result<Vec<TimeSeries>> {
    Ok(vec![
        series("max_curvature", "1/length^2", traj, &per_sample(traj, |m| m.curvature_norm().max()))?,
        series("diameter", "length", traj, &per_sample(traj, Metric::diameter))?,
        series("volume", "length^n", traj, &per_sample(traj, Metric::volume))?,
        series("min_scalar_curvature", "1/length^2", traj, &per_sample(traj, |m| m.scalar_curvature().min()))?,
        series("mean_scalar_curvature", "1/length^2", traj, &per_sample(traj, Metric::mean_scalar_curvature))?,
    ])
}

/// Max-norm over nodes of `∂R/∂t − (ΔR + 2|Ric|² − βR)` per sample, with `∂R/∂t`
/// from finite differences in time.
///
/// With `|Ric|² = |T|² + R²/n` the right-hand side equals
/// `ΔR + 2|T|² + (2/n)R(R − nβ/2)`.
pub fn scalar_evolution_check(traj: &Trajectory) -> Result<TimeSeries> {
    need_derivatives(traj)?;
    let r: Vec<Vec<f64>> = traj.samples.iter().map(|s| s.metric.scalar_curvature().into_values()).collect();
    let nodes = r[0].len();
    let mut dr = vec![vec![0.0; nodes]; r.len()];
    for i in 0..nodes {
        let column: Vec<f64> = r.iter().map(|row| row[i]).collect();
        for (k, d) in uniform_derivative(&column, traj.output_interval).into_iter().enumerate() {
            dr[k][i] = d;
        }
    }
    let values: Vec<f64> = traj
        .samples
        .iter()
        .zip(&dr)
        .map(|(s, d)| {
            let m = &s.metric;
            let beta = traj.kind.trace_coefficient(m);
            let rf = m.scalar_curvature();
            let lap = m.laplace_beltrami(&rf).expect("same backend");
            let ric2 = m.tensor_norm(&m.ricci()).expect("same backend");
            (0..nodes)
                .map(|i| {
                    let rv = rf.values()[i];
                    let rhs = lap.values()[i] + 2.0 * ric2.values()[i] - beta * rv;
                    (d[i] - rhs).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    series("scalar_evolution_residual", "1/length^4", traj, &values)
}

/// `|∫R dV − 8π| / 8π` per sample on S² runs, `None` on other backends.
pub fn gauss_bonnet_check(traj: &Trajectory) -> Result<Option<TimeSeries>> {
    if !matches!(traj.samples[0].metric.backend(), Backend::Axisymmetric { .. }) {
        return Ok(None);
    }
    let total = 8.0 * std::f64::consts::PI;
    let values =
        per_sample(traj, |m| (m.integrate(&m.scalar_curvature()).expect("same backend") - total).abs() / total);
    Ok(Some(series("gauss_bonnet_error", "1", traj, &values)?))
}

/// Step used by [`scalar_evolution_rate_check`] along the flow velocity, in
/// units of the curvature time scale `1/max(1, max|R|)`.
pub const RATE_PROBE_STEP: f64 = 1e-5;

/// Max-norm over nodes of `∂R/∂t − (ΔR + 2|Ric|² − βR)` per sample, with
/// `∂R/∂t` the derivative of `R` along the flow velocity of the sample itself.
///
/// Unlike [`scalar_evolution_check`] this does not depend on the output
/// interval resolving fast transients, such as the relaxation of
/// grid-scale modes right after the initial data.
pub fn scalar_evolution_rate_check(traj: &Trajectory) -> Result<TimeSeries> {
    let mut values = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        let m = &s.metric;
        let h = RATE_PROBE_STEP / m.scalar_curvature().max_abs().max(1.0);
        let x = m.unknowns();
        let v = unknown_rates(m, traj.kind);
        let shifted = |a: f64| -> Result<Vec<f64>> {
            let y: Vec<f64> = x.iter().zip(&v).map(|(x, v)| x + a * v).collect();
            Ok(m.with_unknowns(&y)?.scalar_curvature().into_values())
        };
        let (plus, minus) = (shifted(h)?, shifted(-h)?);
        let beta = traj.kind.trace_coefficient(m);
        let rf = m.scalar_curvature();
        let lap = m.laplace_beltrami(&rf)?;
        let ric2 = m.tensor_norm(&m.ricci())?;
        let worst = (0..rf.values().len())
            .map(|i| {
                let dr = (plus[i] - minus[i]) / (2.0 * h);
                let rhs = lap.values()[i] + 2.0 * ric2.values()[i] - beta * rf.values()[i];
                (dr - rhs).abs()
            })
            .fold(0.0_f64, f64::max);
        values.push(worst);
    }
    series("scalar_evolution_rate_residual", "1/length^4", traj, &values)
}

/// `R̂(t)` and the first violation of its sign behavior, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinScalarReport {
    pub series: TimeSeries,
    pub tolerance: f64,
    /// Time and description of the first violation.
    pub violation: Option<(f64, String)>,
}

/// Flags `R̂` decreasing by more than `tolerance` while non-positive, or
/// crossing from non-negative to negative.
pub fn min_scalar_monitor(traj: &Trajectory, tolerance: f64) -> Result<MinScalarReport> {
    let values = per_sample(traj, |m| m.scalar_curvature().min());
    let times = traj.times();
    let mut violation = None;
    for k in 1..values.len() {
        let (a, b) = (values[k - 1], values[k]);
        if a >= 0.0 && b < -tolerance {
            violation = Some((times[k], format!("min R crossed from {a:e} to {b:e}")));
            break;
        }
        if a <= 0.0 && b < a - tolerance {
            violation = Some((times[k], format!("non-positive min R decreased from {a:e} to {b:e}")));
            break;
        }
    }
    Ok(MinScalarReport { series: series("min_scalar_curvature", "1/length^2", traj, &values)?, tolerance, violation })
}

/// `|d/dt ln Vol − (nβ/2 − r)|` per sample; for the τ-flow `nβ/2 = n/(2τ)`.
pub fn volume_identity_check(traj: &Trajectory) -> Result<TimeSeries> {
    need_derivatives(traj)?;
    let logv = per_sample(traj, |m| m.volume().ln());
    let d = uniform_derivative(&logv, traj.output_interval);
    let values: Vec<f64> = traj
        .samples
        .iter()
        .zip(&d)
        .map(|(s, dv)| {
            let m = &s.metric;
            let n = m.dim() as f64;
            let rhs = 0.5 * n * traj.kind.trace_coefficient(m) - m.mean_scalar_curvature();
            (dv - rhs).abs()
        })
        .collect();
    series("volume_identity_residual", "1/time", traj, &values)
}

/// Traceless Ricci along the run and the evolution of `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracelessReport {
    /// `‖T‖_{C⁰}`.
    pub c0: TimeSeries,
    /// `∫|T|² dV`.
    pub l2: TimeSeries,
    /// `∫₀ᵗ ∫|T|² dV dt` by the trapezoid rule.
    pub cumulative: TimeSeries,
    /// `dr/dt − [(2/Vol)∫|T|² + r(r − nβ/2)]` at samples where the inequality applies.
    pub r_inequality: Option<TimeSeries>,
    /// `|dr/dt − exact right-hand side|`, defined at every sample.
    pub r_identity: TimeSeries,
    /// Samples excluded from the inequality by its gate.
    pub gated_out: usize,
}

impl TracelessReport {
    /// Largest amount by which the inequality fails, 0 when it holds everywhere.
    pub fn r_inequality_violation(&self) -> f64 {
        self.r_inequality.as_ref().map_or(0.0, |s| (-s.min_value()).max(0.0))
    }

    /// Share of `∫∫|T|²` accumulated over the final `fraction` of the run.
    pub fn tail_share(&self, fraction: f64) -> f64 {
        let pts = self.cumulative.points();
        let (t0, t1) = (pts[0].0, pts[pts.len() - 1].0);
        let total = pts[pts.len() - 1].1;
        if total <= 0.0 {
            return 0.0;
        }
        let cut = t1 - fraction * (t1 - t0);
        let before = pts.iter().rfind(|p| p.0 <= cut + 1e-12).map_or(0.0, |p| p.1);
        (total - before) / total
    }
}

/// The term `(1 − 2/n)(1/Vol)∫R(nβ/2 − R) dV` that separates the exact
/// evolution of `r` from the inequality; the inequality holds where it is ≥ 0,
/// in particular wherever `0 ≤ R ≤ nβ/2` pointwise.
fn dropped_term(m: &Metric, beta: f64) -> f64 {
    let n = m.dim() as f64;
    let r = m.scalar_curvature();
    let integrand = r.map(|x| x * (0.5 * n * beta - x));
    (1.0 - 2.0 / n) * m.integrate(&integrand).expect("same backend") / m.volume()
}

pub fn traceless_monitor(traj: &Trajectory, gate_tolerance: f64) -> Result<TracelessReport> {
    need_derivatives(traj)?;
    let c0 = per_sample(traj, traceless_c0);
    let l2 = per_sample(traj, traceless_l2);
    let mut acc = 0.0;
    let mut cumulative = vec![0.0];
    for w in l2.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * traj.output_interval;
        cumulative.push(acc);
    }
    let r = per_sample(traj, Metric::mean_scalar_curvature);
    let dr = uniform_derivative(&r, traj.output_interval);
    let times = traj.times();
    let mut inequality = TimeSeries::new("r_inequality_residual", "1/length^4");
    let mut identity = Vec::with_capacity(r.len());
    let mut gated_out = 0;
    for (k, s) in traj.samples.iter().enumerate() {
        let m = &s.metric;
        let n = m.dim() as f64;
        let beta = traj.kind.trace_coefficient(m);
        let vol = m.volume();
        let bound = 2.0 * l2[k] / vol + r[k] * (r[k] - 0.5 * n * beta);
        let dropped = dropped_term(m, beta);
        identity.push((dr[k] - bound - dropped).abs());
        if dropped >= -gate_tolerance {
            inequality.push(times[k], dr[k] - bound)?;
        } else {
            gated_out += 1;
        }
    }
    Ok(TracelessReport {
        c0: series("traceless_c0", "1/length^2", traj, &c0)?,
        l2: series("traceless_l2", "length^(n-4)", traj, &l2)?,
        cumulative: series("traceless_cumulative", "length^(n-4) time", traj, &cumulative)?,
        r_inequality: if inequality.is_empty() { None } else { Some(inequality) },
        r_identity: series("r_identity_residual", "1/length^4", traj, &identity)?,
        gated_out,
    })
}

/// Checks `∂|T|²/∂t ≤ Δ|T|² + K|T|²` with `K = factor · max_t max|Rm|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracelessGrowthReport {
    pub constant: f64,
    /// `max(0, ∂|T|²/∂t − Δ|T|² − K|T|²)` maximized over nodes.
    pub excess: TimeSeries,
    /// Fitted `sup_k ‖T‖_{C⁰}(t_k) / (∫_{t_k−lag}^{t_k}∫|T|²)^{1/2}`.
    pub moser_constant: Option<f64>,
    pub moser_lag: f64,
}

impl TracelessGrowthReport {
    pub fn holds(&self, tolerance: f64) -> bool {
        self.excess.max_abs() <= tolerance
    }
}

pub fn traceless_growth_check(traj: &Trajectory, factor: f64, lag: f64) -> Result<TracelessGrowthReport> {
    need_derivatives(traj)?;
    let t2: Vec<Vec<f64>> = traj
        .samples
        .iter()
        .map(|s| s.metric.tensor_norm(&s.metric.traceless_ricci()).expect("same backend").into_values())
        .collect();
    let rm = per_sample(traj, |m| m.curvature_norm().max()).into_iter().fold(0.0, f64::max);
    let constant = factor * rm;
    let nodes = t2[0].len();
    let mut dt2 = vec![vec![0.0; nodes]; t2.len()];
    for i in 0..nodes {
        let column: Vec<f64> = t2.iter().map(|row| row[i]).collect();
        for (k, d) in uniform_derivative(&column, traj.output_interval).into_iter().enumerate() {
            dt2[k][i] = d;
        }
    }
    let excess: Vec<f64> = traj
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let m = &s.metric;
            let field = crate::geometry::ScalarField::new(m.backend(), t2[k].clone()).expect("same backend");
            let lap = m.laplace_beltrami(&field).expect("same backend");
            (0..nodes).map(|i| (dt2[k][i] - lap.values()[i] - constant * t2[k][i]).max(0.0)).fold(0.0, f64::max)
        })
        .collect();

    let l2 = per_sample(traj, traceless_l2);
    let c0 = per_sample(traj, traceless_c0);
    let steps = (lag / traj.output_interval).round().max(1.0) as usize;
    let mut moser: Option<f64> = None;
    for k in steps..l2.len() {
        let window: f64 = l2[k - steps..=k].windows(2).map(|w| 0.5 * (w[0] + w[1]) * traj.output_interval).sum();
        if window > 1e-300 && c0[k] > 0.0 {
            let ratio = c0[k] / window.sqrt();
            moser = Some(moser.map_or(ratio, |m: f64| m.max(ratio)));
        }
    }
    Ok(TracelessGrowthReport {
        constant,
        excess: series("traceless_growth_excess", "1/length^4 per time", traj, &excess)?,
        moser_constant: moser,
        moser_lag: steps as f64 * traj.output_interval,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisBounds {
    pub curvature: f64,
    pub diameter: f64,
    pub volume_floor: f64,
}

impl HypothesisBounds {
    /// `max|Rm|` and diameter at most `factor` times, and volume at least
    /// `1/factor` times, the values of `m`.
    pub fn relative_to(m: &Metric, factor: f64) -> Self {
        Self {
            curvature: factor * m.curvature_norm().max(),
            diameter: factor * m.diameter(),
            volume_floor: m.volume() / factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub bounds: HypothesisBounds,
    pub curvature_bound_ok: bool,
    pub diameter_bound_ok: bool,
    pub volume_floor_ok: bool,
    pub max_curvature: Witness,
    pub max_diameter: Witness,
    pub min_volume: Witness,
    /// Earliest sample at which any bound fails.
    pub first_violation: Option<f64>,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.curvature_bound_ok && self.diameter_bound_ok && self.volume_floor_ok
    }
}

pub fn hypothesis_monitor(traj: &Trajectory, bounds: HypothesisBounds) -> HypothesisReport {
    let mut max_curvature = Witness { t: traj.origin, value: f64::NEG_INFINITY };
    let mut max_diameter = Witness { t: traj.origin, value: f64::NEG_INFINITY };
    let mut min_volume = Witness { t: traj.origin, value: f64::INFINITY };
    let mut first_violation = None;
    for s in &traj.samples {
        let (c, d, v) = (s.metric.curvature_norm().max(), s.metric.diameter(), s.metric.volume());
        if c > max_curvature.value {
            max_curvature = Witness { t: s.t, value: c };
        }
        if d > max_diameter.value {
            max_diameter = Witness { t: s.t, value: d };
        }
        if v < min_volume.value {
            min_volume = Witness { t: s.t, value: v };
        }
        if first_violation.is_none() && (c > bounds.curvature || d > bounds.diameter || v < bounds.volume_floor) {
            first_violation = Some(s.t);
        }
    }
    HypothesisReport {
        bounds,
        curvature_bound_ok: max_curvature.value <= bounds.curvature,
        diameter_bound_ok: max_diameter.value <= bounds.diameter,
        volume_floor_ok: min_volume.value >= bounds.volume_floor,
        max_curvature,
        max_diameter,
        min_volume,
        first_violation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyTolerances {
    /// Bound on the weighted soliton-residual integral.
    pub soliton: f64,
    /// Bound on `‖T‖_{C⁰}` and `|R − n/(2τ)|`.
    pub einstein: f64,
    /// Bound on `|Δµ|/Δt` over the final window.
    pub plateau_rate: f64,
    /// Trailing share of the run that must be plateaued.
    pub plateau_fraction: f64,
}

impl Default for ClassifyTolerances {
    fn default() -> Self {
        Self { soliton: 1e-6, einstein: 1e-3, plateau_rate: 1e-4, plateau_fraction: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Soliton,
    Einstein,
    Diverged,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitClassification {
    pub verdict: Verdict,
    /// τ the soliton equation was tested against; `n/(2r)` at the end for flows without a fixed τ.
    pub tau: f64,
    pub soliton_residual: f64,
    pub traceless_c0: f64,
    pub scalar_deviation: f64,
    pub mu_plateau_rate: Option<f64>,
    pub window: (f64, f64),
}

/// `τ* = n/(2r)` read off the final sample when the flow has no fixed τ.
pub fn limit_tau(traj: &Trajectory) -> Option<Tau> {
    match traj.kind {
        FlowKind::TauFlow { tau } => Some(tau),
        _ => {
            let m = &traj.last().metric;
            Tau::new(m.dim() as f64 / (2.0 * m.mean_scalar_curvature())).ok()
        }
    }
}

/// Classifies the end of the run from the µ samples, the backward window and the hypotheses.
pub fn classify_limit(
    traj: &Trajectory,
    mu: &[(f64, MuResult)],
    pair: Option<&ConjugatePair>,
    hypotheses: &HypothesisReport,
    tol: &ClassifyTolerances,
) -> Result<LimitClassification> {
    let t1 = traj.end_time();
    let t0 = t1 - tol.plateau_fraction * (t1 - traj.origin);
    let window = pair.map_or((t0, t1), |p| (p.anchor_time - p.window, p.anchor_time));
    let last = &traj.last().metric;
    let n = last.dim() as f64;
    let tau = limit_tau(traj);
    let traceless_c0 = traceless_c0(last);

    let soliton_residual_value = match (pair, tau) {
        (Some(p), _) => p
            .samples
            .iter()
            .map(|s| Ok(soliton_residual(&s.metric, &s.f, p.tau)?.weighted_integral))
            .collect::<std::result::Result<Vec<f64>, EntropyError>>()?
            .into_iter()
            .fold(0.0, f64::max),
        (None, Some(tau)) => match mu.last() {
            Some((_, r)) if r.minimizer_u.backend() == last.backend() => {
                soliton_residual(last, &r.minimizer_f(), tau)?.weighted_integral
            }
            _ => f64::INFINITY,
        },
        (None, None) => f64::INFINITY,
    };

    let tail: Vec<&(f64, MuResult)> = mu.iter().filter(|(t, _)| *t >= t0 - 1e-12).collect();
    let mu_plateau_rate = if tail.len() >= 2 {
        Some(tail.windows(2).map(|w| (w[1].1.mu - w[0].1.mu).abs() / (w[1].0 - w[0].0)).fold(0.0, f64::max))
    } else {
        None
    };
    let scalar = last.scalar_curvature();
    let (scalar_deviation, gate) = match tau {
        Some(t) => {
            let target = n / (2.0 * t.value());
            let dev = scalar.values().iter().map(|r| (r - target).abs()).fold(0.0, f64::max);
            let gate = scalar.min() >= -tol.einstein && scalar.max() <= target + tol.einstein;
            (dev, gate)
        }
        None => (f64::INFINITY, false),
    };

    let all_converged = mu.iter().all(|(_, r)| r.converged);
    let verdict = if !hypotheses.all_ok() || !traj.is_complete() {
        Verdict::Diverged
    } else if soliton_residual_value <= tol.soliton
        && all_converged
        && mu_plateau_rate.is_some_and(|r| r <= tol.plateau_rate)
    {
        if traceless_c0 <= tol.einstein && scalar_deviation <= tol.einstein && gate {
            Verdict::Einstein
        } else {
            Verdict::Soliton
        }
    } else {
        Verdict::Inconclusive
    };
    Ok(LimitClassification {
        verdict,
        tau: tau.map_or(f64::NAN, Tau::value),
        soliton_residual: soliton_residual_value,
        traceless_c0,
        scalar_deviation,
        mu_plateau_rate,
        window,
    })
}

/// Volumes of Einstein limits rescaled to a common Einstein constant `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EinsteinVolumeEntry {
    pub label: String,
    pub einstein_constant: f64,
    pub volume: f64,
    /// Volume after scaling the metric to Einstein constant `λ`.
    pub normalized_volume: f64,
}

/// Cross-run comparison of limit volumes at the common constant `lambda`.
pub fn einstein_volume_report(limits: &[(String, Metric)], lambda: f64) -> Vec<EinsteinVolumeEntry> {
    limits
        .iter()
        .map(|(label, m)| {
            let n = m.dim() as f64;
            let c = m.mean_scalar_curvature() / n;
            // Ric(αg) = Ric(g), so the Einstein constant of αg is c/α
            let alpha = c / lambda;
            EinsteinVolumeEntry {
                label: label.clone(),
                einstein_constant: c,
                volume: m.volume(),
                normalized_volume: m.volume() * alpha.powf(0.5 * n),
            }
        })
        .collect()
}
