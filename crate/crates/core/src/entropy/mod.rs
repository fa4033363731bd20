//! Perelman's W-entropy, the µ-functional and the conjugate backward heat flow.
//!
//! All integrals carry the weight `(4πτ)^{−n/2} dV`. The gradient term is
//! evaluated in the `u = e^{−f/2}` form, `e^{−f}|∇f|² = 4|∇u|²`, with the
//! same discrete Dirichlet energy that pairs with the Laplacian by summation
//! by parts, so `W(f)` and the u-form objective of the minimizer agree exactly.

mod conjugate;
mod solver;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowError;
use crate::geometry::{GeometryError, Metric, ScalarField, SymTensor, Tau};
use crate::series::SeriesError;

pub use conjugate::{
    backward_conjugate_flow, dw_dt_check, ConjugateOptions, ConjugatePair, ConjugateSample, DwDtCheck,
};
pub use solver::{mu_lipschitz_probe, mu_series, solve_mu, MuResult, MuSeries, SolverOptions};

/// Values below this are treated as zero in logarithms.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Tolerance on `∫(4πτ)^{−n/2} e^{−f} dV = 1` accepted by [`w_functional`].
pub const CONSTRAINT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntropyError {
    #[error("normalization ∫(4πτ)^(-n/2) e^(-f) dV = {value} deviates from 1 by more than {tolerance}")]
    ConstraintViolated { value: f64, tolerance: f64 },
    #[error("non-positive value {value} at node {node}")]
    NonPositive { node: usize, value: f64 },
    #[error("W integrand is not finite")]
    NonFinite,
    #[error("conjugate flow lost positivity at s = {s} (min {min:e})")]
    Positivity { s: f64, min: f64 },
    #[error("anchor minimizer did not converge")]
    UnconvergedAnchor,
    #[error("window [{start}, {end}] is outside the sampled range [{first}, {last}]")]
    Window { start: f64, end: f64, first: f64, last: f64 },
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// `(4πτ)^{−n/2}`.
pub fn heat_kernel_factor(tau: Tau, dim: usize) -> f64 {
    (4.0 * PI * tau.value()).powf(-0.5 * dim as f64)
}

/// `∫(4πτ)^{−n/2} e^{−f} dV`.
pub fn normalization(metric: &Metric, f: &ScalarField, tau: Tau) -> Result<f64, EntropyError> {
    let k = heat_kernel_factor(tau, metric.dim());
    Ok(k * metric.integrate(&f.map(|v| (-v).exp()))?)
}

/// A potential `f` with its τ, normalized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProbe {
    f: ScalarField,
    u: ScalarField,
    tau: Tau,
}

impl EntropyProbe {
    pub fn new(metric: &Metric, f: &ScalarField, tau: Tau) -> Result<Self, EntropyError> {
        let f = normalize_f(metric, f, tau)?;
        let u = f.map(|v| (-0.5 * v).exp());
        Ok(Self { f, u, tau })
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    /// `u = e^{−f/2}`.
    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    pub fn tau(&self) -> Tau {
        self.tau
    }
}

/// Shifts `f` so the normalization constraint holds.
pub fn normalize_f(metric: &Metric, f: &ScalarField, tau: Tau) -> Result<ScalarField, EntropyError> {
    // factor out the minimum so large shifts do not overflow
    let fmin = f.min();
    let shifted = f.map(|v| v - fmin);
    let norm = normalization(metric, &shifted, tau)?;
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(EntropyError::NonFinite);
    }
    let c = norm.ln();
    Ok(shifted.map(|v| v + c))
}

/// Perelman's `W(g, f, τ)`.
pub fn w_functional(metric: &Metric, f: &ScalarField, tau: Tau) -> Result<f64, EntropyError> {
    let norm = normalization(metric, f, tau)?;
    if !((norm - 1.0).abs() <= CONSTRAINT_TOLERANCE) {
        return Err(EntropyError::ConstraintViolated { value: norm, tolerance: CONSTRAINT_TOLERANCE });
    }
    let n = metric.dim() as f64;
    let t = tau.value();
    let r = metric.scalar_curvature();
    let u = f.map(|v| (-0.5 * v).exp());
    let grad = 4.0 * t * metric.dirichlet_energy(&u)?;
    let bulk: f64 = metric
        .volume_form()
        .values()
        .iter()
        .zip(f.values())
        .zip(r.values())
        .map(|((dv, fv), rv)| dv * (-fv).exp() * (t * rv + fv - n))
        .sum();
    let w = heat_kernel_factor(tau, metric.dim()) * (grad + bulk);
    if w.is_finite() {
        Ok(w)
    } else {
        Err(EntropyError::NonFinite)
    }
}

/// `W(g₂, f̂₂, τ) − W(g₁, f̂₁, τ)`, where `f̂ = f + ln N` is the exactly
/// normalized shift of `f` with mass `N`, so that `W(f̂) = W(f)/N + ln N`.
///
/// On the axisymmetric backend the difference is assembled node by node from
/// the differences of the stored unknowns, so it stays accurate when the two
/// values agree to many digits. Other backends subtract directly.
pub fn w_increment(
    first: (&Metric, &ScalarField),
    second: (&Metric, &ScalarField),
    tau: Tau,
) -> Result<f64, EntropyError> {
    let (m1, f1) = first;
    let (m2, f2) = second;
    let (a, b) = match (m1, m2) {
        (Metric::Axisymmetric(a), Metric::Axisymmetric(b)) if a.grid() == b.grid() => (a, b),
        _ => {
            let hat = |m: &Metric, f: &ScalarField| -> Result<f64, EntropyError> {
                let n = normalization(m, f, tau)?;
                Ok(w_functional(m, f, tau)? / n + n.ln())
            };
            return Ok(hat(m2, f2)? - hat(m1, f1)?);
        }
    };
    let q1 = w_functional(m1, f1, tau)?;
    let n1 = normalization(m1, f1, tau)?;
    w_functional(m2, f2, tau)?;
    let grid = a.grid();
    let t = tau.value();
    let (g1, g2) = (a.conformal_exponent(), b.conformal_exponent());
    let (f1, f2) = (f1.values(), f2.values());
    let nodes = g1.len();
    let dg: Vec<f64> = g2.iter().zip(g1).map(|(x, y)| x - y).collect();
    let df: Vec<f64> = f2.iter().zip(f1).map(|(x, y)| x - y).collect();

    let u1: Vec<f64> = f1.iter().map(|x| (-0.5 * x).exp()).collect();
    let du: Vec<f64> = u1.iter().zip(&df).map(|(u, d)| u * (-0.5 * d).exp_m1()).collect();
    let su: Vec<f64> = u1.iter().zip(&du).map(|(u, d)| 2.0 * u + d).collect();
    let (kd, ko) = grid.stiffness();
    let grad: f64 = (0..nodes)
        .map(|i| {
            let mut k = kd[i] * su[i];
            if i > 0 {
                k += ko[i - 1] * su[i - 1];
            }
            if i + 1 < nodes {
                k += ko[i] * su[i + 1];
            }
            du[i] * k
        })
        .sum::<f64>()
        * 2.0
        * PI;

    let mut lap2 = vec![0.0; nodes];
    let mut lapd = vec![0.0; nodes];
    grid.laplace_round(g2, &mut lap2);
    grid.laplace_round(&dg, &mut lapd);
    let n = 2.0;
    let mut dmass = 0.0;
    let bulk: f64 = (0..nodes)
        .map(|i| {
            let e1 = (-2.0 * g1[i]).exp();
            let r2 = (-2.0 * g2[i]).exp() * (2.0 - 2.0 * lap2[i]);
            let dr = e1 * ((-2.0 * dg[i]).exp_m1() * (2.0 - 2.0 * lap2[i]) - 2.0 * lapd[i]);
            let x2 = t * r2 + f2[i] - n;
            let dx = t * dr + df[i];
            let mass = 2.0 * PI * grid.weights()[i] * (2.0 * g1[i] - f1[i]).exp();
            let grow = (2.0 * dg[i] - df[i]).exp_m1();
            dmass += mass * grow;
            mass * (grow * x2 + dx)
        })
        .sum();
    let kappa = heat_kernel_factor(tau, 2);
    let dq = kappa * (4.0 * t * grad + bulk);
    let dn = kappa * dmass;
    let n2 = n1 + dn;
    Ok(dq / n2 - q1 * dn / (n1 * n2) + (dn / n1).ln_1p())
}

/// `x ln x` with the continuous extension `0 ln 0 = 0`.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.max(POSITIVITY_FLOOR).ln()
    }
}

/// Pointwise residual `τ(−4Δu + Ru) − 2u ln u − nu − µu` of the minimizer equation.
pub fn el_residual(metric: &Metric, u: &ScalarField, tau: Tau, mu: f64) -> Result<ScalarField, EntropyError> {
    if let Some((node, &value)) = u.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(EntropyError::NonPositive { node, value });
    }
    let n = metric.dim() as f64;
    let t = tau.value();
    let lap = metric.laplace_beltrami(u)?;
    let r = metric.scalar_curvature();
    let values = u
        .values()
        .iter()
        .zip(lap.values())
        .zip(r.values())
        .map(|((&uv, &l), &rv)| t * (-4.0 * l + rv * uv) - 2.0 * xlogx(uv) - n * uv - mu * uv)
        .collect();
    Ok(ScalarField::new(metric.backend(), values)?)
}

/// The soliton tensor `Ric + Hess f − g/(2τ)` and its norms.
#[derive(Debug, Clone, PartialEq)]
pub struct SolitonResidual {
    pub tensor: SymTensor,
    /// Pointwise `|Ric + Hess f − g/(2τ)|`.
    pub pointwise_norm: ScalarField,
    /// `(4πτ)^{−n/2} ∫ 2τ |·|² e^{−f} dV`, the integrand of `dW/dt`.
    pub weighted_integral: f64,
    /// `∫ |·|² dV` without the heat-kernel weight.
    pub unweighted_integral: f64,
}

pub fn soliton_residual(metric: &Metric, f: &ScalarField, tau: Tau) -> Result<SolitonResidual, EntropyError> {
    let hess = metric.hessian(f)?;
    let tensor = metric.ricci().combine(1.0, &hess, 1.0)?.combine(1.0, &metric.identity(), -0.5 / tau.value())?;
    let sq = metric.tensor_norm(&tensor)?;
    let weighted = sq.zip_map(f, |s, fv| 2.0 * tau.value() * s * (-fv).exp())?;
    let weighted_integral = heat_kernel_factor(tau, metric.dim()) * metric.integrate(&weighted)?;
    let unweighted_integral = metric.integrate(&sq)?;
    Ok(SolitonResidual { tensor, pointwise_norm: sq.map(f64::sqrt), weighted_integral, unweighted_integral })
}

/// Provenance attached to serialized entropy results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: crate::geometry::Backend,
    pub tau: f64,
    pub tolerance: f64,
}
