use std::f64::consts::PI;

use proptest::prelude::*;
use tauflow_core::entropy::{solve_mu, SolverOptions};
use tauflow_core::flow::{evolve, FlowKind, FlowState, StepControl};
use tauflow_core::geometry::{AxisymmetricSphereMetric, HomogeneousSu2Metric, RoundScaleMetric};
use tauflow_core::{Metric, Tau};

fn tau(x: f64) -> Tau {
    Tau::new(x).unwrap()
}

fn sphere(a1: f64, a2: f64, a3: f64) -> Metric {
    AxisymmetricSphereMetric::from_profile(32, |t| a1 * t.cos() + a2 * (2.0 * t).cos() + a3 * (3.0 * t).cos())
        .unwrap()
        .into()
}

/// W of the constant normalized potential, from total scalar curvature and volume.
fn w_constant(m: &Metric, tau: f64) -> f64 {
    let n = m.dim() as f64;
    let v = m.volume();
    let total_r = m.integrate(&m.scalar_curvature()).unwrap();
    tau * total_r / v + (v / (4.0 * PI * tau).powf(0.5 * n)).ln() - n
}

fn round_tau_closed_form(n: usize, c0: f64, tau: f64, t: f64) -> f64 {
    let fixed = 2.0 * (n as f64 - 1.0) * tau;
    fixed + (c0 - fixed) * (t / tau).exp()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gauss_bonnet_holds_for_any_profile(a1 in -0.3..0.3f64, a2 in -0.3..0.3f64, a3 in -0.2..0.2f64) {
        let m = sphere(a1, a2, a3);
        let total = m.integrate(&m.scalar_curvature()).unwrap();
        prop_assert!((total - 8.0 * PI).abs() <= 1e-11 * 8.0 * PI);
    }

    #[test]
    fn mu_is_scale_invariant(a1 in -0.2..0.2f64, a2 in -0.2..0.2f64, t in 0.2..1.0f64, alpha in 0.25..4.0f64) {
        let opts = SolverOptions::default();
        let m = sphere(a1, a2, 0.0);
        let base = solve_mu(&m, tau(t), &opts).unwrap();
        let scaled = solve_mu(&m.scaled(alpha).unwrap(), tau(alpha * t), &opts).unwrap();
        prop_assert!((base.mu - scaled.mu).abs() <= 1e-8, "{} vs {}", base.mu, scaled.mu);
    }

    #[test]
    fn solver_is_sandwiched_and_positive(a1 in -0.3..0.3f64, a2 in -0.2..0.2f64, a3 in -0.1..0.1f64, t in 0.2..1.0f64) {
        let m = sphere(a1, a2, a3);
        let r = solve_mu(&m, tau(t), &SolverOptions::default()).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.el_residual_norm <= 1e-8);
        prop_assert!(r.mu <= w_constant(&m, t) + 1e-8);
        prop_assert!(r.minimizer_u.min() > 0.0);
    }

    #[test]
    fn homogeneous_mu_never_exceeds_constant_trial(a in 0.5..2.0f64, b in 0.5..2.0f64, c in 0.5..2.0f64, t in 0.1..2.0f64) {
        let m: Metric = HomogeneousSu2Metric::new(a, b, c).unwrap().into();
        let r = solve_mu(&m, tau(t), &SolverOptions::default()).unwrap();
        prop_assert!(r.mu <= w_constant(&m, t) + 1e-8);
        prop_assert!(r.minimizer_u.min() > 0.0);
    }

    #[test]
    fn round_scale_rk4_matches_closed_form(n in 2usize..6, c0 in 0.5..3.0f64, t in 0.3..1.5f64) {
        let fixed = 2.0 * (n as f64 - 1.0) * t;
        let c1 = round_tau_closed_form(n, c0, t, 1.0);
        prop_assume!(c1 > 0.2 * c0.min(fixed));
        let s = FlowState::new(RoundScaleMetric::new(n, c0).unwrap(), 0.0);
        let traj = evolve(&s, FlowKind::tau(tau(t)), 1.0, &StepControl::rk4(1e-3), 0.5).unwrap();
        let c = traj.last().metric.unknowns()[0];
        prop_assert!((c - c1).abs() <= 1e-9 * c1.abs().max(1.0), "{c} vs {c1}");
    }
}
