//! Minimization of `W(g, ·, τ)` over normalized potentials.
//!
//! The search runs in `u = e^{−f/2}` on the unit sphere of
//! `L²((4πτ)^{−n/2} dV)`, where the objective
//! `J(u) = κ∫ τ(4|∇u|² + Ru²) − 2u² ln u − nu²` is smooth. Each iteration takes a
//! Sobolev-preconditioned gradient step, projects it onto the tangent space,
//! renormalizes and backtracks until the Armijo condition holds. Objective
//! differences are evaluated in a cancellation-free form so the line search
//! stays meaningful down to residuals far below `√ε`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{heat_kernel_factor, xlogx, EntropyError, Provenance, POSITIVITY_FLOOR};
use crate::flow::{thomas, Trajectory};
use crate::geometry::{Metric, ScalarField, Tau};
use crate::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target for the weighted L² norm of the Euler–Lagrange residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Mass shift of the preconditioner `4τ(−Δ) + σ`.
    pub shift: f64,
    /// Starting point; replaced by the constant potential when absent or unusable.
    #[serde(skip)]
    pub initial: Option<ScalarField>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 100_000, armijo: 1e-4, shift: 1.0, initial: None }
    }
}

impl SolverOptions {
    pub fn with_initial(mut self, u: ScalarField) -> Self {
        self.initial = Some(u);
        self
    }

    fn validate(&self) -> Result<(), EntropyError> {
        if !(self.tolerance > 0.0) {
            return Err(EntropyError::InvalidOption(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(EntropyError::InvalidOption(format!(
                "armijo constant must lie in (0, 1/2), got {}",
                self.armijo
            )));
        }
        if !(self.shift > 0.0) {
            return Err(EntropyError::InvalidOption(format!(
                "preconditioner shift must be positive, got {}",
                self.shift
            )));
        }
        Ok(())
    }
}

/// Outcome of [`solve_mu`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuResult {
    pub mu: f64,
    /// `u* = e^{−f*/2}`, normalized.
    pub minimizer_u: ScalarField,
    pub el_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub provenance: Provenance,
    /// Objective after each accepted step, starting with the initial value.
    #[serde(skip)]
    pub objective_history: Vec<f64>,
    /// `J(u_{k+1}) − J(u_k)` for each accepted step.
    #[serde(skip)]
    pub accepted_decreases: Vec<f64>,
}

impl MuResult {
    pub fn tau(&self) -> Tau {
        Tau::new(self.provenance.tau).expect("stored τ is positive")
    }

    /// `f* = −2 ln u*`.
    pub fn minimizer_f(&self) -> ScalarField {
        self.minimizer_u.map(|u| -2.0 * u.max(POSITIVITY_FLOOR).ln())
    }
}

struct Problem {
    kappa: f64,
    tau: f64,
    n: f64,
    dv: Vec<f64>,
    r: Vec<f64>,
    /// `2π K`, so that `∫|∇u|² dV = uᵀ(2πK)u`.
    stiffness: Option<(Vec<f64>, Vec<f64>)>,
}

impl Problem {
    fn new(metric: &Metric, tau: Tau) -> Self {
        let stiffness = match metric {
            Metric::Axisymmetric(m) => {
                let (d, o) = m.grid().stiffness();
                Some((d.iter().map(|x| 2.0 * PI * x).collect(), o.iter().map(|x| 2.0 * PI * x).collect()))
            }
            _ => None,
        };
        Self {
            kappa: heat_kernel_factor(tau, metric.dim()),
            tau: tau.value(),
            n: metric.dim() as f64,
            dv: metric.volume_form().into_values(),
            r: metric.scalar_curvature().into_values(),
            stiffness,
        }
    }

    fn apply_k(&self, x: &[f64]) -> Vec<f64> {
        match &self.stiffness {
            None => vec![0.0; x.len()],
            Some((d, o)) => (0..x.len())
                .map(|i| {
                    let mut y = d[i] * x[i];
                    if i > 0 {
                        y += o[i - 1] * x[i - 1];
                    }
                    if i + 1 < x.len() {
                        y += o[i] * x[i + 1];
                    }
                    y
                })
                .collect(),
        }
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.kappa * self.dv.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum::<f64>()
    }

    fn normalize(&self, u: &mut [f64]) {
        let s = self.inner(u, u).sqrt();
        u.iter_mut().for_each(|x| *x /= s);
    }

    fn objective(&self, u: &[f64]) -> f64 {
        let ku = self.apply_k(u);
        let grad: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        let bulk: f64 = self
            .dv
            .iter()
            .zip(&self.r)
            .zip(u)
            .map(|((w, r), x)| w * ((self.tau * r - self.n) * x * x - xlogx(x * x)))
            .sum();
        self.kappa * (4.0 * self.tau * grad + bulk)
    }

    /// `J(v) − J(u)` without subtracting two O(1) numbers.
    fn objective_change(&self, u: &[f64], v: &[f64]) -> f64 {
        let diff: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
        let sum: Vec<f64> = v.iter().zip(u).map(|(a, b)| a + b).collect();
        let kd = self.apply_k(&diff);
        let grad: f64 = kd.iter().zip(&sum).map(|(a, b)| a * b).sum();
        let bulk: f64 = (0..u.len())
            .map(|i| {
                let d2 = diff[i] * sum[i];
                // v² ln v² − u² ln u² = d2 ln v² + u² ln(v²/u²)
                let ent = d2 * (v[i] * v[i]).ln() + u[i] * u[i] * 2.0 * (diff[i] / u[i]).ln_1p();
                self.dv[i] * ((self.tau * self.r[i] - self.n) * d2 - ent)
            })
            .sum();
        self.kappa * (4.0 * self.tau * grad + bulk)
    }

    /// Change of the merit `Ĵ(x) = J(x)/⟨x,x⟩ + ln⟨x,x⟩`, which equals `J` on the
    /// constraint sphere and is invariant under `x → λx`. Rounding that moves a
    /// normalized iterate slightly off the sphere therefore does not pollute
    /// the comparison.
    fn merit_change(&self, u: &[f64], ju: f64, v: &[f64]) -> f64 {
        let nu = self.inner(u, u);
        let diff: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
        let sum: Vec<f64> = v.iter().zip(u).map(|(a, b)| a + b).collect();
        let dn = self.inner(&diff, &sum);
        let nv = nu + dn;
        self.objective_change(u, v) / nv - ju * dn / (nu * nv) + (dn / nu).ln_1p()
    }

    fn residual(&self, u: &[f64], mu: f64) -> Vec<f64> {
        let ku = self.apply_k(u);
        (0..u.len())
            .map(|i| {
                // −Δu = (2πK u)/dV
                let lap_neg = ku[i] / self.dv[i];
                self.tau * (4.0 * lap_neg + self.r[i] * u[i]) - 2.0 * xlogx(u[i]) - self.n * u[i] - mu * u[i]
            })
            .collect()
    }

    /// Solves `(4τ·2πK + σ diag(dV)) d = diag(dV) g`.
    fn precondition(&self, g: &[f64], shift: f64) -> Vec<f64> {
        let mut rhs: Vec<f64> = g.iter().zip(&self.dv).map(|(a, w)| a * w).collect();
        match &self.stiffness {
            None => g.iter().map(|x| x / shift).collect(),
            Some((d, o)) => {
                let diag: Vec<f64> = d.iter().zip(&self.dv).map(|(k, w)| 4.0 * self.tau * k + shift * w).collect();
                let off: Vec<f64> = o.iter().map(|k| 4.0 * self.tau * k).collect();
                thomas(&off, &diag, &off, &mut rhs);
                rhs
            }
        }
    }
}

fn starting_point(metric: &Metric, problem: &Problem, opts: &SolverOptions) -> Vec<f64> {
    let usable = opts
        .initial
        .as_ref()
        .filter(|u| u.backend() == metric.backend() && u.values().iter().all(|x| *x > 0.0 && x.is_finite()));
    let mut u = match usable {
        Some(u) => u.values().to_vec(),
        None => vec![1.0; problem.dv.len()],
    };
    problem.normalize(&mut u);
    u
}

/// `µ(g, τ) = inf W(g, f, τ)` over `∫(4πτ)^{−n/2} e^{−f} dV = 1`.
pub fn solve_mu(metric: &Metric, tau: Tau, opts: &SolverOptions) -> Result<MuResult, EntropyError> {
    opts.validate()?;
    let p = Problem::new(metric, tau);
    let mut u = starting_point(metric, &p, opts);
    let mut j = p.objective(&u);
    let mut history = vec![j];
    let mut decreases = Vec::new();
    let mut alpha: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let res = p.residual(&u, j);
        let rnorm = p.inner(&res, &res).sqrt();
        if !rnorm.is_finite() || !j.is_finite() {
            return Err(EntropyError::NonFinite);
        }
        if rnorm <= opts.tolerance {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        let grad: Vec<f64> = res.iter().map(|r| 2.0 * r).collect();
        let mut d = p.precondition(&grad, opts.shift);
        let along = p.inner(&d, &u);
        d.iter_mut().zip(&u).for_each(|(x, y)| *x -= along * y);
        let slope = p.inner(&grad, &d);
        if !(slope > 0.0) {
            break;
        }

        alpha = (2.0 * alpha).min(1.0);
        let mut accepted = None;
        while alpha > 1e-16 {
            let mut v: Vec<f64> = u.iter().zip(&d).map(|(x, y)| (x - alpha * y).max(POSITIVITY_FLOOR)).collect();
            p.normalize(&mut v);
            let dj = p.merit_change(&u, j, &v);
            if dj <= -opts.armijo * alpha * slope {
                accepted = Some((v, dj));
                break;
            }
            alpha *= 0.5;
        }
        let Some((v, dj)) = accepted else { break };
        u = v;
        j = p.objective(&u);
        history.push(j);
        decreases.push(dj);
        iterations += 1;
    }

    let mu = p.objective(&u);
    let res = p.residual(&u, mu);
    let el_residual_norm = p.inner(&res, &res).sqrt();
    Ok(MuResult {
        mu,
        minimizer_u: ScalarField::new(metric.backend(), u)?,
        el_residual_norm,
        iterations,
        converged: converged && el_residual_norm <= opts.tolerance,
        provenance: Provenance { backend: metric.backend(), tau: tau.value(), tolerance: opts.tolerance },
        objective_history: history,
        accepted_decreases: decreases,
    })
}

/// µ sampled along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MuSeries {
    pub series: TimeSeries,
    pub results: Vec<(f64, MuResult)>,
}

/// Evaluates µ at every sample whose time is a multiple of `every` after the
/// origin, warm-starting each solve from the previous minimizer.
pub fn mu_series(traj: &Trajectory, tau: Tau, every: f64, opts: &SolverOptions) -> Result<MuSeries, EntropyError> {
    let ratio = every / traj.output_interval;
    let stride = ratio.round();
    if !(stride >= 1.0 && (ratio - stride).abs() <= 1e-9 * ratio) {
        return Err(EntropyError::InvalidOption(format!(
            "µ cadence {every} is not a multiple of the output interval {}",
            traj.output_interval
        )));
    }
    let stride = stride as usize;
    let mut series = TimeSeries::new("mu", "1");
    let mut results = Vec::new();
    let mut warm: Option<ScalarField> = opts.initial.clone();
    for state in traj.samples.iter().step_by(stride) {
        let o = SolverOptions { initial: warm.take(), ..opts.clone() };
        let r = solve_mu(&state.metric, tau, &o)?;
        series.push(state.t, r.mu)?;
        warm = Some(r.minimizer_u.clone());
        results.push((state.t, r));
    }
    Ok(MuSeries { series, results })
}

/// `|µ(g_ε) − µ(g)| / ε` for `g_ε` with unknowns `x + ε h`.
pub fn mu_lipschitz_probe(
    metric: &Metric,
    tau: Tau,
    direction: &[f64],
    eps: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<(f64, f64)>, EntropyError> {
    let base = solve_mu(metric, tau, opts)?;
    let x = metric.unknowns();
    eps.iter()
        .map(|&e| {
            let y: Vec<f64> = x.iter().zip(direction).map(|(a, h)| a + e * h).collect();
            let g = metric.with_unknowns(&y)?;
            let o = SolverOptions { initial: Some(base.minimizer_u.clone()), ..opts.clone() };
            let r = solve_mu(&g, tau, &o)?;
            Ok((e, (r.mu - base.mu).abs() / e))
        })
        .collect()
}
