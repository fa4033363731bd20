//! Conjugate heat flow run backward from an entropy minimizer.
//!
//! The linear unknown is `v = e^{−f}`, which solves
//! `∂v/∂s = −Δv + (R − nβ/2) v` along `∂g/∂s = −2Ric + βg`. It is integrated in
//! `σ = t − s` with RK4 on the interpolated metric path. The weighted mass
//! `(4πτ)^{−n/2}∫v dV` is a conserved quantity of the semi-discrete system.

use serde::{Deserialize, Serialize};

use super::{normalization, soliton_residual, w_functional, w_increment, EntropyError, MuResult};
use crate::flow::{explicit_step_limit, Interpolation, Trajectory};
use crate::geometry::{Metric, ScalarField, Tau};
use crate::series::{derivative_from_increments, TimeSeries};

/// Smallest admissible value of `e^{−f}`.
pub const CONJUGATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateOptions {
    /// Output spacing `Δs`.
    pub spacing: f64,
    pub interpolation: Interpolation,
}

impl Default for ConjugateOptions {
    fn default() -> Self {
        Self { spacing: 1e-3, interpolation: Interpolation::Hermite }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateSample {
    pub s: f64,
    pub metric: Metric,
    pub f: ScalarField,
}

/// Metrics and potentials on `[t − A, t]`, in increasing `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePair {
    pub anchor_time: f64,
    pub window: f64,
    pub tau: Tau,
    pub options: ConjugateOptions,
    pub samples: Vec<ConjugateSample>,
}

impl ConjugatePair {
    /// `(s, ∫(4πτ)^{−n/2} e^{−f} dV − 1)` per sample.
    pub fn normalization_errors(&self) -> Result<Vec<(f64, f64)>, EntropyError> {
        self.samples.iter().map(|p| Ok((p.s, normalization(&p.metric, &p.f, self.tau)? - 1.0))).collect()
    }

    pub fn max_normalization_error(&self) -> Result<f64, EntropyError> {
        Ok(self.normalization_errors()?.iter().fold(0.0, |m, e| m.max(e.1.abs())))
    }
}

fn rhs(traj: &Trajectory, s: f64, v: &[f64], mode: Interpolation) -> Result<Vec<f64>, EntropyError> {
    let m = traj.metric_at(s, mode)?;
    let n = m.dim() as f64;
    let beta = traj.kind.trace_coefficient(&m);
    let lap = m.laplace_beltrami(&ScalarField::new(m.backend(), v.to_vec())?)?;
    let r = m.scalar_curvature();
    Ok(lap.values().iter().zip(r.values()).zip(v).map(|((l, rv), x)| l - (rv - 0.5 * n * beta) * x).collect())
}

/// Solves the conjugate equation backward over `[anchor_time − window, anchor_time]`
/// from `e^{−f} = u*²`.
pub fn backward_conjugate_flow(
    traj: &Trajectory,
    anchor_time: f64,
    anchor: &MuResult,
    window: f64,
    opts: ConjugateOptions,
) -> Result<ConjugatePair, EntropyError> {
    if !anchor.converged {
        return Err(EntropyError::UnconvergedAnchor);
    }
    if !(window > 0.0 && opts.spacing > 0.0) {
        return Err(EntropyError::InvalidOption(format!(
            "window {window} and spacing {} must be positive",
            opts.spacing
        )));
    }
    let ratio = window / opts.spacing;
    let count = ratio.round();
    if (ratio - count).abs() > 1e-9 * ratio {
        return Err(EntropyError::InvalidOption(format!(
            "window {window} is not a multiple of the spacing {}",
            opts.spacing
        )));
    }
    let count = count as usize;
    let (first, last) = (traj.samples[0].t, traj.end_time());
    let slack = 1e-12 * traj.output_interval.max(1.0);
    let start = anchor_time - window;
    if start < first - slack || anchor_time > last + slack {
        return Err(EntropyError::Window { start, end: anchor_time, first, last });
    }
    let backend = traj.samples[0].metric.backend();
    if anchor.minimizer_u.backend() != backend {
        return Err(EntropyError::Geometry(crate::geometry::GeometryError::BackendMismatch {
            expected: backend,
            found: anchor.minimizer_u.backend(),
        }));
    }

    let gate = traj
        .samples
        .iter()
        .filter(|p| p.t >= start - traj.output_interval && p.t <= anchor_time + traj.output_interval)
        .map(|p| explicit_step_limit(&p.metric))
        .fold(f64::INFINITY, f64::min);
    let substeps = if gate.is_finite() { (opts.spacing / gate).ceil().max(1.0) as usize } else { 1 };
    let h = opts.spacing / substeps as f64;

    let tau = anchor.tau();
    let mode = opts.interpolation;
    let mut v: Vec<f64> = anchor.minimizer_u.values().iter().map(|u| u * u).collect();
    let mut out = Vec::with_capacity(count + 1);
    let sample = |s: f64, v: &[f64]| -> Result<ConjugateSample, EntropyError> {
        let metric = traj.metric_at(s, mode)?;
        let f = ScalarField::new(backend, v.iter().map(|x| -x.ln()).collect())?;
        Ok(ConjugateSample { s, metric, f })
    };
    out.push(sample(anchor_time, &v)?);

    for j in 0..count {
        for i in 0..substeps {
            let sigma = j as f64 * opts.spacing + i as f64 * h;
            let s0 = anchor_time - sigma;
            let k1 = rhs(traj, s0, &v, mode)?;
            let y: Vec<f64> = v.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
            let k2 = rhs(traj, s0 - 0.5 * h, &y, mode)?;
            let y: Vec<f64> = v.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
            let k3 = rhs(traj, s0 - 0.5 * h, &y, mode)?;
            let y: Vec<f64> = v.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
            let k4 = rhs(traj, s0 - h, &y, mode)?;
            for (idx, x) in v.iter_mut().enumerate() {
                *x += h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
            }
        }
        let s = anchor_time - (j + 1) as f64 * opts.spacing;
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min >= CONJUGATE_FLOOR) {
            return Err(EntropyError::Positivity { s, min });
        }
        out.push(sample(s, &v)?);
    }
    out.reverse();
    Ok(ConjugatePair { anchor_time, window, tau, options: opts, samples: out })
}

/// Finite-difference `dW/ds` against `(4πτ)^{−n/2}∫2τ|Ric + Hess f − g/(2τ)|² e^{−f} dV`.
#[derive(Debug, Clone, PartialEq)]
pub struct DwDtCheck {
    pub w: TimeSeries,
    pub finite_difference: TimeSeries,
    pub integral: TimeSeries,
    pub max_abs_diff: f64,
    /// `|W(t) − W(t − A) − ∫ integral ds|` with the trapezoid rule.
    pub cumulative_gap: f64,
}

impl DwDtCheck {
    pub fn min_value(&self) -> f64 {
        self.finite_difference.min_value().min(self.integral.min_value())
    }
}

pub fn dw_dt_check(pair: &ConjugatePair) -> Result<DwDtCheck, EntropyError> {
    let s: Vec<f64> = pair.samples.iter().map(|p| p.s).collect();
    let first = &pair.samples[0];
    let increments: Vec<f64> = pair
        .samples
        .windows(2)
        .map(|x| w_increment((&x[0].metric, &x[0].f), (&x[1].metric, &x[1].f), pair.tau))
        .collect::<Result<_, _>>()?;
    let mass = normalization(&first.metric, &first.f, pair.tau)?;
    let mut w = vec![w_functional(&first.metric, &first.f, pair.tau)? / mass + mass.ln()];
    let mut acc = 0.0;
    for d in &increments {
        acc += d;
        w.push(w[0] + acc);
    }
    let integral: Vec<f64> = pair
        .samples
        .iter()
        .map(|p| Ok(soliton_residual(&p.metric, &p.f, pair.tau)?.weighted_integral))
        .collect::<Result<_, EntropyError>>()?;
    let fd = derivative_from_increments(&increments, pair.options.spacing);
    let max_abs_diff = fd.iter().zip(&integral).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let trap: f64 = integral.windows(2).map(|x| 0.5 * (x[0] + x[1]) * pair.options.spacing).sum();
    let cumulative_gap = (acc - trap).abs();
    Ok(DwDtCheck {
        w: TimeSeries::from_points("w_normalized", "1", &s, &w)?,
        finite_difference: TimeSeries::from_points("dw_ds_finite_difference", "1", &s, &fd)?,
        integral: TimeSeries::from_points("dw_ds_soliton_integral", "1", &s, &integral)?,
        max_abs_diff,
        cumulative_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{solve_mu, SolverOptions};
    use crate::flow::{evolve, FlowKind, FlowState, StepControl};
    use crate::geometry::{AxisymmetricSphereMetric, HomogeneousSu2Metric};
    use std::f64::consts::PI;

    fn tau(v: f64) -> Tau {
        Tau::new(v).unwrap()
    }

    fn short_run(m: usize, amp: f64, horizon: f64) -> Trajectory {
        let g = AxisymmetricSphereMetric::from_profile(m, |t| amp * (2.0 * t).cos()).unwrap();
        let ctl = StepControl::rk4(1e-4).with_volume_target(4.0 * PI);
        evolve(&FlowState::new(g, 0.0), FlowKind::tau(tau(0.5)), horizon, &ctl, 0.01).unwrap()
    }

    #[test]
    fn round_sphere_potential_is_stationary() {
        let g = AxisymmetricSphereMetric::round(32).unwrap();
        let ctl = StepControl::rk4(1e-3);
        let traj = evolve(&FlowState::new(g, 0.0), FlowKind::tau(tau(0.5)), 0.2, &ctl, 0.01).unwrap();
        let anchor = solve_mu(&traj.last().metric, tau(0.5), &SolverOptions::default()).unwrap();
        let pair = backward_conjugate_flow(&traj, 0.2, &anchor, 0.1, ConjugateOptions::default()).unwrap();
        assert_eq!(pair.samples.len(), 101);
        for p in &pair.samples {
            for f in p.f.values() {
                assert!((f - 2f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_flow_conserves_mass() {
        let traj = short_run(64, 0.1, 0.3);
        let anchor = solve_mu(&traj.last().metric, tau(0.5), &SolverOptions::default()).unwrap();
        let pair = backward_conjugate_flow(&traj, 0.3, &anchor, 0.2, ConjugateOptions::default()).unwrap();
        assert!(pair.max_normalization_error().unwrap() < 1e-7);
        assert!((pair.samples[0].s - 0.1).abs() < 1e-12);
        assert_eq!(pair.samples.last().unwrap().s, 0.3);
    }

    #[test]
    fn entropy_increases_with_matching_rate() {
        let traj = short_run(64, 0.1, 0.3);
        let anchor = solve_mu(&traj.last().metric, tau(0.5), &SolverOptions::default()).unwrap();
        let pair = backward_conjugate_flow(&traj, 0.3, &anchor, 0.2, ConjugateOptions::default()).unwrap();
        let check = dw_dt_check(&pair).unwrap();
        let w = check.w.values();
        assert!(w.windows(2).all(|x| x[1] >= x[0] - 1e-12));
        let scale = check.integral.max_abs();
        assert!(scale > 1e-6);
        assert!(check.max_abs_diff < 1e-2 * scale, "{} vs {}", check.max_abs_diff, scale);
        assert!(check.cumulative_gap < 1e-2 * (w[w.len() - 1] - w[0]));
    }

    #[test]
    fn homogeneous_window() {
        let g = HomogeneousSu2Metric::new(1.2, 1.0, 0.9).unwrap();
        let traj =
            evolve(&FlowState::new(g, 0.0), FlowKind::tau(tau(0.25)), 0.2, &StepControl::rk4(1e-3), 0.01).unwrap();
        let anchor = solve_mu(&traj.last().metric, tau(0.25), &SolverOptions::default()).unwrap();
        let pair = backward_conjugate_flow(&traj, 0.2, &anchor, 0.1, ConjugateOptions::default()).unwrap();
        let e = pair.max_normalization_error().unwrap();
        assert!(e < 1e-7, "{e}");
        let check = dw_dt_check(&pair).unwrap();
        assert!(check.max_abs_diff < 1e-5 * check.integral.max_abs().max(1.0));
    }

    #[test]
    fn window_outside_range_is_rejected() {
        let traj = short_run(32, 0.05, 0.1);
        let anchor = solve_mu(&traj.last().metric, tau(0.5), &SolverOptions::default()).unwrap();
        let err = backward_conjugate_flow(&traj, 0.1, &anchor, 0.2, ConjugateOptions::default()).unwrap_err();
        assert!(matches!(err, EntropyError::Window { .. }));
    }

    #[test]
    fn pair_round_trips_through_json() {
        let traj = short_run(32, 0.05, 0.05);
        let anchor = solve_mu(&traj.last().metric, tau(0.5), &SolverOptions::default()).unwrap();
        let opts = ConjugateOptions { spacing: 0.01, interpolation: Interpolation::Linear };
        let pair = backward_conjugate_flow(&traj, 0.05, &anchor, 0.05, opts).unwrap();
        let back: ConjugatePair = serde_json::from_str(&serde_json::to_string(&pair).unwrap()).unwrap();
        assert_eq!(back, pair);
    }
}
