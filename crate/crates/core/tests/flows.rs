mod common;

use std::f64::consts::PI;

use common::rescaling::rescaling_residuals;
use tauflow_core::diagnostics::{gauss_bonnet_check, volume_identity_check};
use tauflow_core::flow::{evolve, extend, FlowKind, FlowState, StepControl, Termination};
use tauflow_core::geometry::{AxisymmetricSphereMetric, RoundScaleMetric};
use tauflow_core::Tau;

fn tau_flow(t: f64) -> FlowKind {
    FlowKind::tau(Tau::new(t).unwrap())
}

#[test]
fn rescaled_run_solves_the_unnormalized_flow() {
    let run = |m: usize, dt: f64, dt_out: f64| {
        let s = FlowState::new(AxisymmetricSphereMetric::from_profile(m, |t| 0.05 * t.cos()).unwrap(), 0.0);
        evolve(&s, tau_flow(0.5), 0.5, &StepControl::rk4(dt), dt_out).unwrap()
    };
    let coarse = rescaling_residuals(&run(32, 4e-4, 4e-3), 4e-3);
    let fine = rescaling_residuals(&run(64, 1e-4, 2e-3), 2e-3);
    assert!(fine.flow_equation < 1e-3, "{}", fine.flow_equation);
    assert!(fine.flow_equation < coarse.flow_equation);
    assert!(fine.curvature_scaling < 1e-10, "{}", fine.curvature_scaling);
}

#[test]
fn shrinking_sphere_dies_at_the_closed_form_time() {
    for (n, c0) in [(2, 1.0), (3, 1.5)] {
        let s = FlowState::new(RoundScaleMetric::new(n, c0).unwrap(), 0.0);
        let ctl = StepControl { blowup_curvature: 1e6, ..StepControl::rk4(1e-4) };
        let traj = evolve(&s, FlowKind::RicciUnnormalized, 2.0, &ctl, 1e-3).unwrap();
        let expected = c0 / (2.0 * (n as f64 - 1.0));
        let Termination::Singularity { t, .. } = traj.termination else { panic!("{:?}", traj.termination) };
        assert!((t - expected).abs() < 1e-3, "n = {n}: {t} vs {expected}");
    }
}

#[test]
fn sphere_runs_conserve_gauss_bonnet() {
    let s = FlowState::new(AxisymmetricSphereMetric::from_profile(64, |t| 0.1 * (2.0 * t).cos()).unwrap(), 0.0);
    for (kind, ctl) in [
        (tau_flow(0.5), StepControl::rk4(1e-3)),
        (FlowKind::RicciNormalized, StepControl::rk4(1e-3)),
        (tau_flow(0.5), StepControl::rk4(1e-3).with_volume_target(4.0 * PI)),
    ] {
        let traj = evolve(&s, kind, 0.3, &ctl, 0.01).unwrap();
        let gb = gauss_bonnet_check(&traj).unwrap().unwrap();
        assert!(gb.max_abs() < 1e-12, "{kind:?}: {}", gb.max_abs());
    }
}

#[test]
fn volume_identity_converges_with_sampling() {
    let s = FlowState::new(RoundScaleMetric::new(3, 2.3).unwrap(), 0.0);
    let res = |dt_out: f64| {
        let traj = evolve(&s, tau_flow(0.5), 0.5, &StepControl::rk4(1e-4), dt_out).unwrap();
        volume_identity_check(&traj).unwrap().max_abs()
    };
    let (a, b) = (res(0.01), res(0.005));
    assert!(a / b > 3.5, "{a} {b}");
}

#[test]
fn resumed_round_scale_run_is_bit_identical() {
    let s = FlowState::new(RoundScaleMetric::new(3, 2.2).unwrap(), 0.0);
    let ctl = StepControl::rk4(1e-3);
    let straight = evolve(&s, tau_flow(0.5), 1.0, &ctl, 0.01).unwrap();
    let mut split = evolve(&s, tau_flow(0.5), 0.37, &ctl, 0.01).unwrap();
    extend(&mut split, 0.63, &ctl).unwrap();
    assert_eq!(straight, split);
}
