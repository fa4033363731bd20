//! Residuals of the map from the τ-flow to the unnormalized Ricci flow on S².
#![allow(dead_code)]

use tauflow_core::flow::{rescale_factor, rescale_to_unnormalized, t_of_s, Interpolation, Trajectory};

pub struct RescalingResiduals {
    /// `max |∂ū/∂s + R̄/2| / max(1, max |R̄|/2)` over interior samples, central differences in `s`.
    pub flow_equation: f64,
    /// `max |R(ḡ) − R(g)/c| / max |R(ḡ)|`.
    pub curvature_scaling: f64,
}

pub fn rescaling_residuals(traj: &Trajectory, ds: f64) -> RescalingResiduals {
    let tau = traj.kind.tau_value().expect("τ-flow trajectory");
    let bar = rescale_to_unnormalized(traj, ds, Interpolation::Hermite).unwrap();
    let u: Vec<Vec<f64>> = bar.samples.iter().map(|s| s.metric.unknowns()).collect();
    let r: Vec<Vec<f64>> = bar.samples.iter().map(|s| s.metric.scalar_curvature().values().to_vec()).collect();

    let mut flow_equation = 0.0_f64;
    for j in 1..u.len() - 1 {
        let scale = r[j].iter().fold(1.0_f64, |m, x| m.max(0.5 * x.abs()));
        for k in 0..u[j].len() {
            let du = (u[j + 1][k] - u[j - 1][k]) / (2.0 * ds);
            flow_equation = flow_equation.max((du + 0.5 * r[j][k]).abs() / scale);
        }
    }

    let mut curvature_scaling = 0.0_f64;
    for (j, sample) in bar.samples.iter().enumerate() {
        let s = sample.t;
        let t = t_of_s(s, tau).unwrap().min(traj.end_time());
        let g = traj.metric_at(t, Interpolation::Hermite).unwrap();
        let c = rescale_factor(s, tau);
        let big = r[j].iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for (rb, rg) in r[j].iter().zip(g.scalar_curvature().values()) {
            curvature_scaling = curvature_scaling.max((rb - rg / c).abs() / big);
        }
    }
    RescalingResiduals { flow_equation, curvature_scaling }
}
