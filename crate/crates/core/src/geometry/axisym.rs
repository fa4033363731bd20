//! Rotationally symmetric conformal metrics on S².
//!
//! The metric is `g = e^{2u(θ)} (dθ² + sin²θ dφ²)` sampled at the colatitudes
//! `θ_k = kπ/M`, `k = 0..=M`. Operators use a finite-volume form of the round
//! Laplacian: node `k` owns the band between the neighbouring edge midpoints,
//! whose exact area fraction `∫ sin θ dθ` is the quadrature weight. Fluxes
//! through the pole edges vanish, which is the Neumann regularity condition
//! `∂_θ u = 0`, and the pole row reduces to the one-sided stencil
//! `Δφ ≈ 2φ''(pole)`. Summation by parts holds exactly on this grid, so
//! `∫ R dV = 8π` to rounding for every profile.

use std::f64::consts::PI;
use std::sync::Arc;

use super::GeometryError;

/// Smallest supported number of colatitude intervals.
pub const MIN_INTERVALS: usize = 16;

/// Uniform colatitude grid with precomputed finite-volume coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    intervals: usize,
    spacing: f64,
    theta: Vec<f64>,
    cot: Vec<f64>,
    /// Cell area fractions `∫ sin θ dθ`; they sum to 2.
    weights: Vec<f64>,
    /// `sin θ_{k+1/2}` for the `M` interior edges.
    edge_sin: Vec<f64>,
}

impl SphereGrid {
    pub fn new(intervals: usize) -> Result<Self, GeometryError> {
        if intervals < MIN_INTERVALS {
            return Err(GeometryError::GridTooCoarse { intervals, min: MIN_INTERVALS });
        }
        let h = PI / intervals as f64;
        let theta: Vec<f64> = (0..=intervals).map(|k| k as f64 * h).collect();
        let cot = theta
            .iter()
            .enumerate()
            .map(|(k, t)| if k == 0 || k == intervals { 0.0 } else { t.cos() / t.sin() })
            .collect();
        let pole_cap = 2.0 * (0.25 * h).sin().powi(2); // 1 − cos(h/2)
        let half = (0.5 * h).sin();
        let weights = theta
            .iter()
            .enumerate()
            .map(|(k, t)| if k == 0 || k == intervals { pole_cap } else { 2.0 * t.sin() * half })
            .collect();
        let edge_sin = (0..intervals).map(|k| ((k as f64 + 0.5) * h).sin()).collect();
        Ok(Self { intervals, spacing: h, theta, cot, weights, edge_sin })
    }

    /// Number of intervals `M`; the grid has `M + 1` nodes.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn nodes(&self) -> usize {
        self.intervals + 1
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Round-sphere Laplacian `φ'' + cot θ φ'` in flux form.
    pub fn laplace_round(&self, phi: &[f64], out: &mut [f64]) {
        let n = self.intervals;
        let h = self.spacing;
        let mut left_flux = 0.0;
        for k in 0..=n {
            let right_flux = if k < n { self.edge_sin[k] * (phi[k + 1] - phi[k]) / h } else { 0.0 };
            out[k] = (right_flux - left_flux) / self.weights[k];
            left_flux = right_flux;
        }
    }

    /// `∫ |∇φ|² dA` on the unit sphere divided by 2π. Conformally invariant,
    /// so it is the same for every metric on this grid.
    pub fn dirichlet_sum(&self, phi: &[f64]) -> f64 {
        let h = self.spacing;
        self.edge_sin.iter().zip(phi.windows(2)).map(|(s, w)| s * (w[1] - w[0]).powi(2) / h).sum()
    }

    /// Symmetric tridiagonal stiffness matrix `K` with `φᵀKφ = dirichlet_sum(φ)`,
    /// returned as (diagonal, off-diagonal).
    pub fn stiffness(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.spacing;
        let mut diag = vec![0.0; self.nodes()];
        let mut off = vec![0.0; self.intervals];
        for k in 0..self.intervals {
            let c = self.edge_sin[k] / h;
            diag[k] += c;
            diag[k + 1] += c;
            off[k] = -c;
        }
        (diag, off)
    }

    /// Nodal first derivative; zero at the poles by regularity.
    pub fn derivative(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.intervals;
        let h = self.spacing;
        (0..=n).map(|k| if k == 0 || k == n { 0.0 } else { (phi[k + 1] - phi[k - 1]) / (2.0 * h) }).collect()
    }

    /// Trapezoid rule on the uniform grid.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        let n = self.intervals;
        let inner: f64 = values[1..n].iter().sum();
        self.spacing * (inner + 0.5 * (values[0] + values[n]))
    }
}

/// `g = e^{2u(θ)} (dθ² + sin²θ dφ²)` on S².
#[derive(Debug, Clone, PartialEq)]
pub struct AxisymmetricSphereMetric {
    grid: Arc<SphereGrid>,
    u: Vec<f64>,
}

impl AxisymmetricSphereMetric {
    pub fn new(grid: Arc<SphereGrid>, u: Vec<f64>) -> Result<Self, GeometryError> {
        if u.len() != grid.nodes() {
            return Err(GeometryError::GridMismatch { expected: grid.nodes(), found: u.len() });
        }
        if let Some(k) = u.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidMetric(format!("conformal exponent is not finite at node {k}")));
        }
        Ok(Self { grid, u })
    }

    /// Round unit sphere, `u ≡ 0`.
    pub fn round(intervals: usize) -> Result<Self, GeometryError> {
        let grid = Arc::new(SphereGrid::new(intervals)?);
        let u = vec![0.0; grid.nodes()];
        Self::new(grid, u)
    }

    /// Profile sampled from a function of the colatitude.
    pub fn from_profile(intervals: usize, profile: impl Fn(f64) -> f64) -> Result<Self, GeometryError> {
        let grid = Arc::new(SphereGrid::new(intervals)?);
        let u = grid.theta().iter().map(|&t| profile(t)).collect();
        Self::new(grid, u)
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn conformal_exponent(&self) -> &[f64] {
        &self.u
    }

    pub(crate) fn with_exponent(&self, u: Vec<f64>) -> Result<Self, GeometryError> {
        Self::new(Arc::clone(&self.grid), u)
    }

    /// `R = e^{−2u}(2 − 2Δ_round u)`.
    pub fn scalar_curvature(&self) -> Vec<f64> {
        let mut lap = vec![0.0; self.u.len()];
        self.grid.laplace_round(&self.u, &mut lap);
        self.u.iter().zip(&lap).map(|(u, l)| (-2.0 * u).exp() * (2.0 - 2.0 * l)).collect()
    }

    pub fn laplace_beltrami(&self, phi: &[f64]) -> Vec<f64> {
        let mut lap = vec![0.0; phi.len()];
        self.grid.laplace_round(phi, &mut lap);
        lap.iter().zip(&self.u).map(|(l, u)| l * (-2.0 * u).exp()).collect()
    }

    /// Orthonormal-frame components `(Hess(e_θ, e_θ), Hess(e_φ, e_φ))`.
    ///
    /// The φφ part is `(cot θ + u') φ' e^{−2u}` from `Γ^θ_φφ`; the θθ part is
    /// the remainder of the Laplacian, so the trace matches
    /// [`laplace_beltrami`](Self::laplace_beltrami) node for node.
    pub fn hessian(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.intervals;
        let lap = self.laplace_beltrami(phi);
        let dphi = self.grid.derivative(phi);
        let du = self.grid.derivative(&self.u);
        let mut tt = vec![0.0; n + 1];
        let mut pp = vec![0.0; n + 1];
        for k in 0..=n {
            if k == 0 || k == n {
                tt[k] = 0.5 * lap[k];
                pp[k] = 0.5 * lap[k];
            } else {
                pp[k] = (self.grid.cot[k] + du[k]) * dphi[k] * (-2.0 * self.u[k]).exp();
                tt[k] = lap[k] - pp[k];
            }
        }
        (tt, pp)
    }

    /// Nodal volume elements `2π w_k e^{2u_k}`.
    pub fn volume_form(&self) -> Vec<f64> {
        self.grid.weights.iter().zip(&self.u).map(|(w, u)| 2.0 * PI * w * (2.0 * u).exp()).collect()
    }

    pub fn volume(&self) -> f64 {
        self.volume_form().iter().sum()
    }

    /// Meridian length `∫₀^π e^u dθ`, the distance between the poles.
    pub fn diameter(&self) -> f64 {
        let e: Vec<f64> = self.u.iter().map(|u| u.exp()).collect();
        self.grid.trapezoid(&e)
    }

    /// Smallest `e^{2u}` on the grid, which sets the explicit diffusion limit.
    pub fn min_conformal_factor(&self) -> f64 {
        self.u.iter().fold(f64::INFINITY, |m, u| m.min((2.0 * u).exp()))
    }

    pub fn dirichlet_energy(&self, phi: &[f64]) -> f64 {
        2.0 * PI * self.grid.dirichlet_sum(phi)
    }
}
