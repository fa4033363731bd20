//! Time integration of the τ-flow and the Ricci flows.
//!
//! Every family in [`crate::geometry`] is invariant under these flows, so the
//! integrators act on the reduced unknowns (`u` per node, `c`, or `(A, B, C)`)
//! rather than on full tensors. All three flows share the form
//! `∂g/∂t = −2Ric + βg` with `β = 1/τ`, `0`, or `2r/n`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Metric, SymTensor, Tau};

/// Explicit RK4 stability gate on the axisymmetric backend: `dt ≤ 0.4 h² min e^{2u}`.
pub const DIFFUSION_CFL: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("singularity at t = {t}: {reason}")]
    Singularity { t: f64, reason: String, last_valid: Box<FlowState> },
    #[error("step size underflow at t = {t} (dt = {dt})")]
    Stiffness { t: f64, dt: f64, last_valid: Box<FlowState> },
    #[error("dt = {dt} exceeds the explicit stability limit {limit}")]
    UnstableStep { dt: f64, limit: f64 },
    #[error("invalid step control: {0}")]
    InvalidControl(String),
    #[error("outside the domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowKind {
    TauFlow { tau: Tau },
    RicciUnnormalized,
    RicciNormalized,
}

impl FlowKind {
    pub fn tau(tau: Tau) -> Self {
        FlowKind::TauFlow { tau }
    }

    /// The coefficient `β` in `∂g/∂t = −2Ric + βg`.
    pub fn trace_coefficient(&self, metric: &Metric) -> f64 {
        match self {
            FlowKind::TauFlow { tau } => 1.0 / tau.value(),
            FlowKind::RicciUnnormalized => 0.0,
            FlowKind::RicciNormalized => 2.0 * metric.mean_scalar_curvature() / metric.dim() as f64,
        }
    }

    pub fn tau_value(&self) -> Option<Tau> {
        match self {
            FlowKind::TauFlow { tau } => Some(*tau),
            _ => None,
        }
    }
}

/// Right-hand side tensor `−2Ric + βg`.
pub fn time_derivative(metric: &Metric, kind: FlowKind) -> SymTensor {
    let beta = kind.trace_coefficient(metric);
    metric.ricci().combine(-2.0, &metric.identity(), beta).expect("same backend")
}

/// Rates of the reduced unknowns.
pub fn unknown_rates(metric: &Metric, kind: FlowKind) -> Vec<f64> {
    match metric {
        // ∂u/∂t = (β − R)/2
        Metric::Axisymmetric(m) => {
            let beta = kind.trace_coefficient(metric);
            m.scalar_curvature().iter().map(|r| 0.5 * (beta - r)).collect()
        }
        _ => metric.unknown_rates(&time_derivative(metric, kind)).expect("same backend"),
    }
}

/// Largest explicit step the backend tolerates; infinite for the ODE families.
pub fn explicit_step_limit(metric: &Metric) -> f64 {
    match metric {
        Metric::Axisymmetric(m) => {
            let h = m.grid().spacing();
            DIFFUSION_CFL * h * h * m.min_conformal_factor()
        }
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    ImplicitEuler,
}

/// Step-doubling error control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adaptivity {
    pub tolerance: f64,
    pub min_dt: f64,
    pub max_dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub dt: f64,
    pub method: Method,
    pub adapt: Option<Adaptivity>,
    /// Rescale to this volume after every step when set.
    pub volume_target: Option<f64>,
    /// `max |Rm|` beyond which a run is declared singular.
    pub blowup_curvature: f64,
}

impl StepControl {
    pub fn rk4(dt: f64) -> Self {
        Self { dt, method: Method::Rk4, adapt: None, volume_target: None, blowup_curvature: 1e12 }
    }

    pub fn with_volume_target(mut self, target: f64) -> Self {
        self.volume_target = Some(target);
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FlowError::InvalidControl(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(a) = self.adapt {
            if !(a.tolerance > 0.0 && a.min_dt > 0.0 && a.min_dt <= a.max_dt) {
                return Err(FlowError::InvalidControl(format!(
                    "adaptivity needs tolerance > 0 and 0 < min_dt <= max_dt, got {a:?}"
                )));
            }
        }
        if let Some(v) = self.volume_target {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FlowError::InvalidControl(format!("volume target must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// A metric at a flow time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub metric: Metric,
    pub t: f64,
}

impl FlowState {
    pub fn new(metric: impl Into<Metric>, t: f64) -> Self {
        Self { metric: metric.into(), t }
    }
}

/// Result of one (possibly adaptive) step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: FlowState,
    pub taken: f64,
    /// Step size to try next; equals `taken` without adaptivity.
    pub suggested: f64,
}

fn singular(state: &FlowState, t: f64, reason: impl Into<String>) -> FlowError {
    FlowError::Singularity { t, reason: reason.into(), last_valid: Box::new(state.clone()) }
}

fn rk4_fixed(state: &FlowState, kind: FlowKind, dt: f64) -> Result<Vec<f64>, FlowError> {
    let x0 = state.metric.unknowns();
    let stage = |x: &[f64]| -> Result<Vec<f64>, FlowError> {
        let m = state.metric.with_unknowns(x).map_err(|e| singular(state, state.t, e.to_string()))?;
        Ok(unknown_rates(&m, kind))
    };
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x0.iter().zip(k).map(|(x, k)| x + a * k).collect() };
    let k1 = stage(&x0)?;
    let k2 = stage(&axpy(0.5 * dt, &k1))?;
    let k3 = stage(&axpy(0.5 * dt, &k2))?;
    let k4 = stage(&axpy(dt, &k3))?;
    Ok((0..x0.len()).map(|i| x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// Solves a tridiagonal system `(lower, diag, upper) x = rhs` in place.
pub(crate) fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut b = diag[0];
    c[0] = if n > 1 { upper[0] / b } else { 0.0 };
    rhs[0] /= b;
    for i in 1..n {
        b = diag[i] - lower[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = upper[i] / b;
        }
        rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-13;

/// Backward Euler by Newton iteration. The trace coefficient `β` is frozen at
/// the start of the step, which only matters for the normalized flow.
fn implicit_euler(state: &FlowState, kind: FlowKind, dt: f64) -> Result<Vec<f64>, FlowError> {
    let x0 = state.metric.unknowns();
    let beta = kind.trace_coefficient(&state.metric);
    let mut x = x0.clone();
    for _ in 0..NEWTON_MAX_ITER {
        let m = state.metric.with_unknowns(&x).map_err(|e| singular(state, state.t, e.to_string()))?;
        let delta = match &m {
            Metric::Axisymmetric(am) => {
                let grid = am.grid();
                let n = grid.nodes();
                let mut lap = vec![0.0; n];
                grid.laplace_round(&x, &mut lap);
                let (kd, ko) = grid.stiffness();
                let w = grid.weights();
                let mut diag = vec![0.0; n];
                let mut lower = vec![0.0; n - 1];
                let mut upper = vec![0.0; n - 1];
                let mut rhs = vec![0.0; n];
                for k in 0..n {
                    let e = (-2.0 * x[k]).exp();
                    let f = e * (lap[k] - 1.0) + 0.5 * beta;
                    rhs[k] = -(x[k] - x0[k] - dt * f);
                    // D = −W⁻¹K
                    diag[k] = 1.0 - dt * (-2.0 * e * (lap[k] - 1.0) - e * kd[k] / w[k]);
                    if k + 1 < n {
                        upper[k] = -dt * (-e * ko[k] / w[k]);
                    }
                    if k > 0 {
                        lower[k - 1] = -dt * (-e * ko[k - 1] / w[k]);
                    }
                }
                thomas(&lower, &diag, &upper, &mut rhs);
                rhs
            }
            _ => {
                let rate = |m: &Metric| -> Vec<f64> {
                    m.unknown_rates(&m.ricci().combine(-2.0, &m.identity(), beta).expect("same backend"))
                        .expect("same backend")
                };
                let f0 = rate(&m);
                let g0: Vec<f64> = (0..x.len()).map(|i| x[i] - x0[i] - dt * f0[i]).collect();
                let mut jac = vec![vec![0.0; x.len()]; x.len()];
                for j in 0..x.len() {
                    let eps = 1e-7 * x[j].abs().max(1.0);
                    let mut xp = x.clone();
                    xp[j] += eps;
                    let mp = m.with_unknowns(&xp).map_err(|e| singular(state, state.t, e.to_string()))?;
                    let fp = rate(&mp);
                    for i in 0..x.len() {
                        let d = (fp[i] - f0[i]) / eps;
                        jac[i][j] = if i == j { 1.0 - dt * d } else { -dt * d };
                    }
                }
                solve_dense(jac, g0.iter().map(|v| -v).collect())
                    .ok_or_else(|| singular(state, state.t, "singular Newton matrix"))?
            }
        };
        let size = delta.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        for (xi, di) in x.iter_mut().zip(&delta) {
            *xi += di;
        }
        if !size.is_finite() {
            return Err(singular(state, state.t, "Newton iteration diverged"));
        }
        if size <= NEWTON_TOL * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
            return Ok(x);
        }
    }
    Err(FlowError::Stiffness { t: state.t, dt, last_valid: Box::new(state.clone()) })
}

fn fixed_step(state: &FlowState, kind: FlowKind, method: Method, dt: f64) -> Result<FlowState, FlowError> {
    let x = match method {
        Method::Rk4 => {
            let limit = explicit_step_limit(&state.metric);
            if dt > limit * (1.0 + 1e-12) {
                return Err(FlowError::UnstableStep { dt, limit });
            }
            rk4_fixed(state, kind, dt)?
        }
        Method::ImplicitEuler => implicit_euler(state, kind, dt)?,
    };
    let t = state.t + dt;
    let metric = state.metric.with_unknowns(&x).map_err(|e| singular(state, t, e.to_string()))?;
    Ok(FlowState { metric, t })
}

fn order(method: Method) -> i32 {
    match method {
        Method::Rk4 => 4,
        Method::ImplicitEuler => 1,
    }
}

/// One step of size `ctl.dt`. With adaptivity the step is retried with
/// smaller sizes until the step-doubling error estimate meets the tolerance,
/// so `taken` may be smaller than `ctl.dt`.
pub fn step(state: &FlowState, kind: FlowKind, ctl: &StepControl) -> Result<Step, FlowError> {
    ctl.validate()?;
    let Some(adapt) = ctl.adapt else {
        let next = fixed_step(state, kind, ctl.method, ctl.dt)?;
        return Ok(Step { state: next, taken: ctl.dt, suggested: ctl.dt });
    };
    let p = order(ctl.method);
    let mut h = ctl.dt.min(adapt.max_dt);
    loop {
        if h < adapt.min_dt {
            return Err(FlowError::Stiffness { t: state.t, dt: h, last_valid: Box::new(state.clone()) });
        }
        let attempt = (|| -> Result<(FlowState, f64), FlowError> {
            let big = fixed_step(state, kind, ctl.method, h)?;
            let half = fixed_step(state, kind, ctl.method, 0.5 * h)?;
            let two = fixed_step(&half, kind, ctl.method, 0.5 * h)?;
            let err =
                big.metric.unknowns().iter().zip(two.metric.unknowns()).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()))
                    / (2f64.powi(p) - 1.0);
            Ok((FlowState { metric: two.metric, t: state.t + h }, err))
        })();
        match attempt {
            Ok((next, err)) if err <= adapt.tolerance => {
                let grow = if err > 0.0 { 0.9 * (adapt.tolerance / err).powf(1.0 / (p + 1) as f64) } else { 2.0 };
                let suggested = (h * grow.clamp(0.2, 2.0)).clamp(adapt.min_dt, adapt.max_dt);
                return Ok(Step { state: next, taken: h, suggested });
            }
            Ok((_, err)) => {
                let shrink = 0.9 * (adapt.tolerance / err).powf(1.0 / (p + 1) as f64);
                h *= shrink.clamp(0.1, 0.5);
            }
            Err(FlowError::UnstableStep { limit, .. }) => h = limit,
            Err(FlowError::Singularity { .. }) => h *= 0.5,
            Err(e) => return Err(e),
        }
    }
}

/// Rescales `metric` homothetically to the target volume.
pub fn volume_projection(metric: &Metric, target: f64) -> Result<Metric, FlowError> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(FlowError::InvalidControl(format!("volume target must be positive, got {target}")));
    }
    let alpha = (target / metric.volume()).powf(2.0 / metric.dim() as f64);
    if alpha == 1.0 {
        return Ok(metric.clone());
    }
    Ok(metric.scaled(alpha)?)
}

/// Why an evolution stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Singularity { t: f64, reason: String },
    Stiffness { t: f64, dt: f64 },
}

/// Record of the optional per-step volume correction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionLog {
    pub applications: u64,
    /// Largest `|ln α|` applied in a single projection.
    pub max_log_factor: f64,
}

/// Flow samples at `t_k = origin + k·output_interval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: FlowKind,
    pub origin: f64,
    pub output_interval: f64,
    pub samples: Vec<FlowState>,
    pub termination: Termination,
    pub projection: ProjectionLog,
}

/// How the metric is reconstructed between samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Cubic Hermite using the flow rates at the two bracketing samples.
    Hermite,
}

impl Trajectory {
    pub fn sample_time(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.output_interval
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &FlowState {
        self.samples.last().expect("trajectories hold at least the initial state")
    }

    pub fn end_time(&self) -> f64 {
        self.last().t
    }

    pub fn is_complete(&self) -> bool {
        self.termination == Termination::Completed
    }

    /// Metric at an arbitrary time inside the sampled range.
    pub fn metric_at(&self, t: f64, mode: Interpolation) -> Result<Metric, FlowError> {
        let n = self.samples.len();
        let (t0, t1) = (self.samples[0].t, self.end_time());
        let slack = 1e-12 * self.output_interval;
        if !(t >= t0 - slack && t <= t1 + slack) {
            return Err(FlowError::Domain(format!("t = {t} outside the sampled range [{t0}, {t1}]")));
        }
        if n == 1 {
            return Ok(self.samples[0].metric.clone());
        }
        let pos = ((t - self.origin) / self.output_interval).clamp(0.0, (n - 1) as f64);
        let k = (pos.floor() as usize).min(n - 2);
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        let dt = b.t - a.t;
        let s = ((t - a.t) / dt).clamp(0.0, 1.0);
        if s == 0.0 {
            return Ok(a.metric.clone());
        }
        if s == 1.0 {
            return Ok(b.metric.clone());
        }
        let (xa, xb) = (a.metric.unknowns(), b.metric.unknowns());
        let x: Vec<f64> = match mode {
            Interpolation::Linear => xa.iter().zip(&xb).map(|(p, q)| (1.0 - s) * p + s * q).collect(),
            Interpolation::Hermite => {
                let (va, vb) = (unknown_rates(&a.metric, self.kind), unknown_rates(&b.metric, self.kind));
                let h00 = (1.0 + 2.0 * s) * (1.0 - s).powi(2);
                let h10 = s * (1.0 - s).powi(2);
                let h01 = s * s * (3.0 - 2.0 * s);
                let h11 = s * s * (s - 1.0);
                (0..xa.len()).map(|i| h00 * xa[i] + h10 * dt * va[i] + h01 * xb[i] + h11 * dt * vb[i]).collect()
            }
        };
        Ok(a.metric.with_unknowns(&x)?)
    }
}

fn max_curvature(metric: &Metric) -> f64 {
    metric.curvature_norm().max()
}

fn project(metric: Metric, ctl: &StepControl, log: &mut ProjectionLog) -> Result<Metric, FlowError> {
    match ctl.volume_target {
        Some(target) => {
            let vol = metric.volume();
            let projected = volume_projection(&metric, target)?;
            log.applications += 1;
            log.max_log_factor = log.max_log_factor.max((target / vol).ln().abs() * 2.0 / metric.dim() as f64);
            Ok(projected)
        }
        None => Ok(metric),
    }
}

/// Advances `state` to exactly `t_end`, sub-stepping under the step limits.
fn advance(
    mut state: FlowState,
    t_end: f64,
    kind: FlowKind,
    ctl: &StepControl,
    log: &mut ProjectionLog,
) -> Result<FlowState, FlowError> {
    let explicit = ctl.method == Method::Rk4;
    let mut h_try = ctl.dt;
    while state.t < t_end {
        let remaining = t_end - state.t;
        let limit = if explicit { explicit_step_limit(&state.metric) } else { f64::INFINITY };
        let cap = h_try.min(limit);
        if cap < 1e-14 * remaining.max(1.0) || cap < 1e-300 {
            return Err(singular(&state, state.t, format!("explicit step limit collapsed to {cap:e}")));
        }
        let last = state.clone();
        let (mut next, landed) = if ctl.adapt.is_some() {
            let h = cap.min(remaining);
            let local = StepControl { dt: h, ..*ctl };
            let st = step(&state, kind, &local)?;
            h_try = st.suggested;
            let landed = st.taken >= remaining;
            (st.state, landed)
        } else {
            let pieces = (remaining / cap * (1.0 - 1e-12)).ceil().max(1.0);
            let h = remaining / pieces;
            (fixed_step(&state, kind, ctl.method, h)?, pieces == 1.0)
        };
        if landed {
            next.t = t_end;
        }
        next.metric = project(next.metric, ctl, log)?;
        let curv = max_curvature(&next.metric);
        if !curv.is_finite() || curv > ctl.blowup_curvature {
            return Err(singular(&last, next.t, format!("curvature norm {curv:e} exceeds the blow-up bound")));
        }
        state = next;
    }
    Ok(state)
}

fn sample_count(span: f64, interval: f64) -> Result<usize, FlowError> {
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(FlowError::InvalidControl(format!("output interval must be positive, got {interval}")));
    }
    if !(span >= 0.0 && span.is_finite()) {
        return Err(FlowError::InvalidControl(format!("horizon must be non-negative, got {span}")));
    }
    let n = (span / interval).round();
    if (n * interval - span).abs() > 1e-9 * span.max(interval) {
        return Err(FlowError::InvalidControl(format!(
            "horizon {span} is not a multiple of the output interval {interval}"
        )));
    }
    Ok(n as usize)
}

/// Evolves `s0` for `horizon` and samples every `output_interval`.
///
/// Singularities and step-size underflow end the run early; the reason is
/// kept in [`Trajectory::termination`] together with every sample reached.
pub fn evolve(
    s0: &FlowState,
    kind: FlowKind,
    horizon: f64,
    ctl: &StepControl,
    output_interval: f64,
) -> Result<Trajectory, FlowError> {
    ctl.validate()?;
    sample_count(horizon, output_interval)?;
    let mut projection = ProjectionLog::default();
    let first = FlowState { metric: project(s0.metric.clone(), ctl, &mut projection)?, t: s0.t };
    let mut traj = Trajectory {
        kind,
        origin: s0.t,
        output_interval,
        samples: vec![first],
        termination: Termination::Completed,
        projection,
    };
    extend(&mut traj, horizon, ctl)?;
    Ok(traj)
}

/// Continues a completed trajectory by `extra_horizon`.
///
/// Each output interval is integrated from its starting sample alone, so a
/// run split at a sample and continued here reproduces the uninterrupted run
/// bit for bit.
pub fn extend(traj: &mut Trajectory, extra_horizon: f64, ctl: &StepControl) -> Result<(), FlowError> {
    ctl.validate()?;
    if !traj.is_complete() {
        return Err(FlowError::Domain("cannot extend a trajectory that terminated early".into()));
    }
    let extra = sample_count(extra_horizon, traj.output_interval)?;
    let start = traj.samples.len() - 1;
    for k in start..start + extra {
        let t_end = traj.sample_time(k + 1);
        let current = traj.samples[k].clone();
        match advance(current, t_end, traj.kind, ctl, &mut traj.projection) {
            Ok(next) => traj.samples.push(next),
            Err(FlowError::Singularity { t, reason, .. }) => {
                traj.termination = Termination::Singularity { t, reason };
                break;
            }
            Err(FlowError::Stiffness { t, dt, .. }) => {
                traj.termination = Termination::Stiffness { t, dt };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// `s(t) = τ(1 − e^{−t/τ})`.
pub fn s_of_t(t: f64, tau: Tau) -> f64 {
    -tau.value() * (-t / tau.value()).exp_m1()
}

/// `t(s) = −τ ln(1 − s/τ)`, defined for `s < τ`.
pub fn t_of_s(s: f64, tau: Tau) -> Result<f64, FlowError> {
    if s >= tau.value() || s < 0.0 {
        return Err(FlowError::Domain(format!("s = {s} must lie in [0, τ = {})", tau.value())));
    }
    Ok(-tau.value() * (-s / tau.value()).ln_1p())
}

/// `c(s) = 1 − s/τ`.
pub fn rescale_factor(s: f64, tau: Tau) -> f64 {
    1.0 - s / tau.value()
}

/// Maps a τ-flow trajectory onto the unnormalized Ricci flow
/// `ḡ(s) = c(s) g(t(s))`, resampled every `ds` in `s`.
pub fn rescale_to_unnormalized(traj: &Trajectory, ds: f64, mode: Interpolation) -> Result<Trajectory, FlowError> {
    let FlowKind::TauFlow { tau } = traj.kind else {
        return Err(FlowError::Domain("rescaling needs a τ-flow trajectory".into()));
    };
    if !(ds > 0.0) {
        return Err(FlowError::InvalidControl(format!("ds must be positive, got {ds}")));
    }
    let t_first = traj.samples[0].t;
    if t_first != 0.0 {
        return Err(FlowError::Domain(format!("rescaling expects the trajectory to start at t = 0, got {t_first}")));
    }
    let s_max = s_of_t(traj.end_time(), tau);
    let count = (s_max / ds * (1.0 + 1e-12)).floor() as usize;
    let mut samples = Vec::with_capacity(count + 1);
    for j in 0..=count {
        let s = j as f64 * ds;
        let t = t_of_s(s, tau)?.min(traj.end_time());
        let metric = traj.metric_at(t, mode)?.scaled(rescale_factor(s, tau))?;
        samples.push(FlowState { metric, t: s });
    }
    Ok(Trajectory {
        kind: FlowKind::RicciUnnormalized,
        origin: 0.0,
        output_interval: ds,
        samples,
        termination: Termination::Completed,
        projection: ProjectionLog::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AxisymmetricSphereMetric, HomogeneousSu2Metric, RoundScaleMetric};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn tau(v: f64) -> Tau {
        Tau::new(v).unwrap()
    }

    /// Closed-form scale of the round τ-flow, independent of the integrator.
    fn round_tau_exact(n: usize, c0: f64, tau: f64, t: f64) -> f64 {
        let fixed = 2.0 * (n as f64 - 1.0) * tau;
        fixed + (c0 - fixed) * (t / tau).exp()
    }

    #[test]
    fn round_scale_fixed_point_has_zero_derivative() {
        for n in [2, 3, 5] {
            let t = 0.7;
            let c = 2.0 * (n as f64 - 1.0) * t;
            let m: Metric = RoundScaleMetric::new(n, c).unwrap().into();
            let d = time_derivative(&m, FlowKind::tau(tau(t)));
            assert!(d.max_abs_component() < 1e-14);
        }
    }

    #[test]
    fn unit_sphere_is_stationary_at_half() {
        let m: Metric = AxisymmetricSphereMetric::round(32).unwrap().into();
        assert!(time_derivative(&m, FlowKind::tau(tau(0.5))).max_abs_component() < 1e-13);
    }

    #[test]
    fn normalized_flow_preserves_volume_to_first_order() {
        let m: Metric =
            AxisymmetricSphereMetric::from_profile(64, |t| 0.2 * t.cos() + 0.1 * (2.0 * t).cos()).unwrap().into();
        let d = time_derivative(&m, FlowKind::RicciNormalized);
        let dvol = m.integrate(&d.trace()).unwrap();
        assert!(dvol.abs() < 1e-12, "{dvol}");
        let h: Metric = HomogeneousSu2Metric::new(1.3, 1.0, 0.9).unwrap().into();
        let d = time_derivative(&h, FlowKind::RicciNormalized);
        assert!(h.integrate(&d.trace()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fixed_point_is_preserved_by_step() {
        let s = FlowState::new(AxisymmetricSphereMetric::round(64).unwrap(), 0.0);
        let ctl = StepControl::rk4(1e-4);
        let next = step(&s, FlowKind::tau(tau(0.5)), &ctl).unwrap().state;
        let diff = next.metric.unknowns().iter().fold(0.0f64, |m, u| m.max(u.abs()));
        assert!(diff <= 1e-12);
    }

    #[test]
    fn rk4_matches_round_tau_flow() {
        for n in [2, 3] {
            let c0 = 1.3 * 2.0 * (n as f64 - 1.0) * 0.5;
            let s = FlowState::new(RoundScaleMetric::new(n, c0).unwrap(), 0.0);
            let traj = evolve(&s, FlowKind::tau(tau(0.5)), 1.0, &StepControl::rk4(1e-3), 0.5).unwrap();
            let c = traj.last().metric.unknowns()[0];
            let exact = round_tau_exact(n, c0, 0.5, 1.0);
            assert!((c - exact).abs() <= 1e-9, "n={n}: {c} vs {exact}");
        }
    }

    #[test]
    fn rk4_observed_order() {
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| {
                let s = FlowState::new(RoundScaleMetric::new(3, 3.0).unwrap(), 0.0);
                let traj = evolve(&s, FlowKind::tau(tau(0.5)), 1.0, &StepControl::rk4(dt), 1.0).unwrap();
                (traj.last().metric.unknowns()[0] - round_tau_exact(3, 3.0, 0.5, 1.0)).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let p = (w[0] / w[1]).log2();
            assert!(p >= 3.8, "observed order {p}, errors {errs:?}");
        }
    }

    #[test]
    fn shrinking_sphere_hits_singularity() {
        for (n, expected) in [(2usize, 0.5), (3, 0.25)] {
            let s = FlowState::new(RoundScaleMetric::new(n, 1.0).unwrap(), 0.0);
            let traj = evolve(&s, FlowKind::RicciUnnormalized, 1.0, &StepControl::rk4(1e-3), 0.01).unwrap();
            match traj.termination {
                Termination::Singularity { t, .. } => assert!((t - expected).abs() < 0.02, "n={n}: t={t}"),
                ref other => panic!("expected singularity, got {other:?}"),
            }
            assert!(traj.end_time() < expected);
        }
    }

    #[test]
    fn step_reports_singularity_with_last_state() {
        let s = FlowState::new(RoundScaleMetric::new(2, 0.01).unwrap(), 0.3);
        let err = step(&s, FlowKind::RicciUnnormalized, &StepControl::rk4(0.1)).unwrap_err();
        match err {
            FlowError::Singularity { last_valid, .. } => assert_eq!(*last_valid, s),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_step_limit_is_enforced() {
        let s = FlowState::new(AxisymmetricSphereMetric::round(64).unwrap(), 0.0);
        let err = step(&s, FlowKind::RicciNormalized, &StepControl::rk4(1e-2)).unwrap_err();
        assert!(matches!(err, FlowError::UnstableStep { .. }));
    }

    #[test]
    fn zero_horizon_gives_single_sample() {
        let s = FlowState::new(RoundScaleMetric::new(2, 1.0).unwrap(), 0.0);
        let traj = evolve(&s, FlowKind::tau(tau(0.5)), 0.0, &StepControl::rk4(1e-3), 0.1).unwrap();
        assert_eq!(traj.samples.len(), 1);
    }

    #[test]
    fn implicit_euler_is_first_order_and_stable() {
        let run = |dt: f64| {
            let s = FlowState::new(RoundScaleMetric::new(2, 0.8).unwrap(), 0.0);
            let ctl = StepControl { method: Method::ImplicitEuler, ..StepControl::rk4(dt) };
            let traj = evolve(&s, FlowKind::tau(tau(0.5)), 0.5, &ctl, 0.5).unwrap();
            (traj.last().metric.unknowns()[0] - round_tau_exact(2, 0.8, 0.5, 0.5)).abs()
        };
        let (e1, e2) = (run(0.01), run(0.005));
        assert!((e1 / e2 - 2.0).abs() < 0.2, "{e1} {e2}");

        // far beyond the explicit limit on the sphere; the projection removes the unstable volume mode
        let s = FlowState::new(AxisymmetricSphereMetric::from_profile(64, |t| 0.05 * (2.0 * t).cos()).unwrap(), 0.0);
        let ctl = StepControl { method: Method::ImplicitEuler, ..StepControl::rk4(0.01) }.with_volume_target(4.0 * PI);
        let traj = evolve(&s, FlowKind::tau(tau(0.5)), 1.0, &ctl, 0.5).unwrap();
        assert!(traj.is_complete());
        let dev = traj.last().metric.unknowns().iter().fold(0.0f64, |m, u| m.max(u.abs()));
        assert!(dev < 0.05 * (-3.0f64).exp(), "{dev}");
    }

    #[test]
    fn adaptive_step_doubling_meets_tolerance() {
        let s = FlowState::new(RoundScaleMetric::new(3, 3.0).unwrap(), 0.0);
        let ctl = StepControl {
            dt: 0.5,
            adapt: Some(Adaptivity { tolerance: 1e-10, min_dt: 1e-8, max_dt: 0.5 }),
            ..StepControl::rk4(0.5)
        };
        let traj = evolve(&s, FlowKind::tau(tau(0.5)), 1.0, &ctl, 0.25).unwrap();
        let err = (traj.last().metric.unknowns()[0] - round_tau_exact(3, 3.0, 0.5, 1.0)).abs();
        assert!(err < 1e-7, "{err}");
        let bad = StepControl { adapt: Some(Adaptivity { tolerance: 1e-10, min_dt: 1.0, max_dt: 0.5 }), ..ctl };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn projection_hits_target() {
        let m: Metric = RoundScaleMetric::new(2, 1.0).unwrap().into();
        let p = volume_projection(&m, 16.0 * PI).unwrap();
        assert_abs_diff_eq!(p.unknowns()[0], 4.0, epsilon = 1e-12);
        let s: Metric = AxisymmetricSphereMetric::round(32).unwrap().into();
        let p = volume_projection(&s, 8.0 * PI).unwrap();
        for u in p.unknowns() {
            assert_abs_diff_eq!(u, 0.5 * 2f64.ln(), epsilon = 1e-12);
        }
        assert_eq!(volume_projection(&s, s.volume()).unwrap(), s);
    }

    #[test]
    fn rescaling_maps() {
        let t = tau(0.5);
        assert_eq!(s_of_t(0.0, t), 0.0);
        assert_eq!(t_of_s(0.0, t).unwrap(), 0.0);
        assert_eq!(rescale_factor(0.0, t), 1.0);
        for ti in [0.1, 1.0, 3.0] {
            let s = s_of_t(ti, t);
            assert_abs_diff_eq!(s, 0.5 * (1.0 - (-ti / 0.5f64).exp()), epsilon = 1e-15);
            assert_abs_diff_eq!(t_of_s(s, t).unwrap(), ti, epsilon = 1e-12);
        }
        assert!(t_of_s(0.5, t).is_err());
    }

    #[test]
    fn hermite_interpolation_beats_linear() {
        let s = FlowState::new(RoundScaleMetric::new(2, 1.2).unwrap(), 0.0);
        let traj = evolve(&s, FlowKind::tau(tau(0.5)), 1.0, &StepControl::rk4(1e-3), 0.1).unwrap();
        let t = 0.537;
        let exact = round_tau_exact(2, 1.2, 0.5, t);
        let lin = traj.metric_at(t, Interpolation::Linear).unwrap().unknowns()[0];
        let her = traj.metric_at(t, Interpolation::Hermite).unwrap().unknowns()[0];
        assert!((her - exact).abs() < 1e-5);
        assert!((her - exact).abs() < 0.01 * (lin - exact).abs());
        assert!(traj.metric_at(1.5, Interpolation::Linear).is_err());
    }

    #[test]
    fn split_run_matches_straight_run() {
        let s = FlowState::new(AxisymmetricSphereMetric::from_profile(32, |t| 0.1 * t.cos()).unwrap(), 0.0);
        let kind = FlowKind::tau(tau(0.5));
        let ctl = StepControl::rk4(1e-3).with_volume_target(4.0 * PI);
        let straight = evolve(&s, kind, 0.2, &ctl, 0.05).unwrap();
        let mut split = evolve(&s, kind, 0.1, &ctl, 0.05).unwrap();
        extend(&mut split, 0.1, &ctl).unwrap();
        assert_eq!(straight.samples, split.samples);
    }
}
