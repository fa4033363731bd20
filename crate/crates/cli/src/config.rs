//! Experiment description read from TOML.
//!
//! ```toml
//! [geometry]
//! backend = "axisymmetric_s2"   # or "round_scale", "homogeneous_su2"
//! intervals = 256
//! cosine_modes = [0.0, 0.05]    # u₀(θ) = Σ c_l cos(lθ)
//!
//! [flow]
//! kind = "tau"                  # "tau", "ricci" or "normalized"
//! tau = 0.5
//! dt = 1e-4
//! horizon = 2.0
//! output_interval = 0.005
//! volume_projection = true
//! volume_target = 12.566370614359172
//!
//! [entropy]
//! mu_every = 0.1
//! window = 0.5
//!
//! [output]
//! dir = "runs/perturbed"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tauflow_core::diagnostics::ClassifyTolerances;
use tauflow_core::flow::{Adaptivity, FlowKind, Interpolation, Method, StepControl};
use tauflow_core::geometry::{AxisymmetricSphereMetric, HomogeneousSu2Metric, RoundScaleMetric, MIN_INTERVALS};
use tauflow_core::{Metric, Tau};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub flow: FlowConfig,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    AxisymmetricS2 {
        intervals: usize,
        #[serde(default)]
        cosine_modes: Vec<f64>,
    },
    RoundScale {
        dimension: usize,
        scale: f64,
    },
    HomogeneousSu2 {
        coefficients: [f64; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowName {
    Tau,
    Ricci,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub kind: FlowName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "default_method")]
    pub method: Method,
    pub dt: f64,
    pub horizon: f64,
    pub output_interval: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<Adaptivity>,
    #[serde(default)]
    pub volume_projection: bool,
    /// Defaults to the initial volume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_target: Option<f64>,
    #[serde(default = "default_blowup")]
    pub blowup_curvature: f64,
}

fn default_method() -> Method {
    Method::Rk4
}

fn default_blowup() -> f64 {
    1e12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    /// Cadence of µ solves; no µ series when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_every: Option<f64>,
    /// τ for µ; defaults to the flow's τ, or to `n/(2r)` at the end of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Backward window `A` ending at the final sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_interpolation")]
    pub interpolation: Interpolation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_tolerance: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_spacing() -> f64 {
    1e-3
}

fn default_interpolation() -> Interpolation {
    Interpolation::Hermite
}

fn default_max_iterations() -> usize {
    100_000
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            mu_every: None,
            tau: None,
            window: None,
            spacing: default_spacing(),
            interpolation: default_interpolation(),
            solver_tolerance: None,
            max_iterations: default_max_iterations(),
        }
    }
}

/// Hypothesis bounds and monitor parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Bounds relative to the initial metric: `max|Rm|` and diameter at most
    /// this factor times, volume at least its inverse times, the initial values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moser_lag: Option<f64>,
}

/// Per-check tolerances overriding the profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inequality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotonicity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conservation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dw_agreement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauss_bonnet: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_convergence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soliton: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub einstein: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_fraction: Option<f64>,
}

/// Seeded spectral perturbation of the initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub seed: u64,
    pub amplitude: f64,
    /// Highest cosine mode perturbed on S²; ignored elsewhere.
    #[serde(default = "default_modes")]
    pub modes: usize,
}

fn default_modes() -> usize {
    3
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Settings of the two-resolution suite run by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub horizon: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { horizon: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceProfile {
    #[default]
    Default,
    Strict,
}

/// Tolerances after applying the profile and the config overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub identity: f64,
    pub inequality: f64,
    pub monotonicity: f64,
    pub conservation: f64,
    pub dw_agreement: f64,
    pub gauss_bonnet: f64,
    pub grid_convergence: f64,
    /// Slack for quantities that must be non-negative.
    pub sign: f64,
    pub solver: f64,
    pub classify: ClassifyTolerances,
}

impl Tolerances {
    pub fn profile(profile: ToleranceProfile) -> Self {
        match profile {
            ToleranceProfile::Default => Self {
                identity: 1e-5,
                inequality: 1e-6,
                monotonicity: 1e-6,
                conservation: 1e-6,
                dw_agreement: 1e-4,
                gauss_bonnet: 1e-5,
                grid_convergence: 1e-5,
                sign: 1e-8,
                solver: 1e-8,
                classify: ClassifyTolerances::default(),
            },
            ToleranceProfile::Strict => Self {
                identity: 1e-6,
                inequality: 1e-8,
                monotonicity: 1e-8,
                conservation: 1e-8,
                dw_agreement: 1e-5,
                gauss_bonnet: 1e-8,
                grid_convergence: 1e-6,
                sign: 1e-10,
                solver: 1e-10,
                classify: ClassifyTolerances {
                    soliton: 1e-8,
                    einstein: 1e-4,
                    plateau_rate: 1e-5,
                    plateau_fraction: 0.25,
                },
            },
        }
    }

    fn overlay(mut self, o: &ToleranceOverrides, solver: Option<f64>) -> Self {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut self.identity, o.identity);
        set(&mut self.inequality, o.inequality);
        set(&mut self.monotonicity, o.monotonicity);
        set(&mut self.conservation, o.conservation);
        set(&mut self.dw_agreement, o.dw_agreement);
        set(&mut self.gauss_bonnet, o.gauss_bonnet);
        set(&mut self.grid_convergence, o.grid_convergence);
        set(&mut self.sign, o.sign);
        set(&mut self.solver, solver);
        set(&mut self.classify.soliton, o.soliton);
        set(&mut self.classify.einstein, o.einstein);
        set(&mut self.classify.plateau_rate, o.plateau_rate);
        set(&mut self.classify.plateau_fraction, o.plateau_fraction);
        self
    }
}

fn positive(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn multiple_of(field: &'static str, span: f64, step: f64, step_name: &str) -> Result<(), ConfigError> {
    let n = (span / step).round();
    if n < 1.0 || (n * step - span).abs() > 1e-9 * span.max(step) {
        return Err(invalid(field, format!("{span} is not a positive multiple of {step_name} = {step}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, Path::new("<inline>"))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.geometry {
            GeometryConfig::AxisymmetricS2 { intervals, cosine_modes } => {
                if *intervals < MIN_INTERVALS {
                    return Err(invalid(
                        "geometry.intervals",
                        format!("must be at least {MIN_INTERVALS}, got {intervals}"),
                    ));
                }
                if cosine_modes.iter().any(|c| !c.is_finite()) {
                    return Err(invalid("geometry.cosine_modes", "coefficients must be finite"));
                }
            }
            GeometryConfig::RoundScale { dimension, scale } => {
                if *dimension < 2 {
                    return Err(invalid("geometry.dimension", format!("must be at least 2, got {dimension}")));
                }
                positive("geometry.scale", *scale)?;
            }
            GeometryConfig::HomogeneousSu2 { coefficients } => {
                for c in coefficients {
                    positive("geometry.coefficients", *c)?;
                }
            }
        }
        let f = &self.flow;
        match (f.kind, f.tau) {
            (FlowName::Tau, None) => return Err(invalid("flow.tau", "required for the τ-flow")),
            (_, Some(t)) => {
                positive("flow.tau", t)?;
            }
            _ => {}
        }
        positive("flow.dt", f.dt)?;
        positive("flow.output_interval", f.output_interval)?;
        if !(f.horizon >= 0.0 && f.horizon.is_finite()) {
            return Err(invalid("flow.horizon", format!("must be non-negative and finite, got {}", f.horizon)));
        }
        if f.horizon > 0.0 {
            multiple_of("flow.horizon", f.horizon, f.output_interval, "flow.output_interval")?;
        }
        positive("flow.blowup_curvature", f.blowup_curvature)?;
        if let Some(v) = f.volume_target {
            positive("flow.volume_target", v)?;
            if !f.volume_projection {
                return Err(invalid("flow.volume_target", "set without flow.volume_projection = true"));
            }
        }
        if let Some(a) = f.adaptive {
            if !(a.tolerance > 0.0 && a.min_dt > 0.0 && a.min_dt <= a.max_dt) {
                return Err(invalid("flow.adaptive", "needs tolerance > 0 and 0 < min_dt <= max_dt"));
            }
        }
        let e = &self.entropy;
        if let Some(every) = e.mu_every {
            positive("entropy.mu_every", every)?;
            multiple_of("entropy.mu_every", every, f.output_interval, "flow.output_interval")?;
        }
        if let Some(t) = e.tau {
            positive("entropy.tau", t)?;
        }
        positive("entropy.spacing", e.spacing)?;
        if let Some(w) = e.window {
            positive("entropy.window", w)?;
            multiple_of("entropy.window", w, e.spacing, "entropy.spacing")?;
            if f.kind != FlowName::Tau {
                return Err(invalid("entropy.window", "the backward window needs the τ-flow"));
            }
            if e.tau.is_some_and(|t| Some(t) != f.tau) {
                return Err(invalid("entropy.window", "the backward window needs entropy.tau equal to flow.tau"));
            }
            if w > f.horizon {
                return Err(invalid("entropy.window", format!("{w} exceeds the horizon {}", f.horizon)));
            }
        }
        if let Some(t) = e.solver_tolerance {
            positive("entropy.solver_tolerance", t)?;
        }
        if e.max_iterations == 0 {
            return Err(invalid("entropy.max_iterations", "must be positive"));
        }
        let d = &self.diagnostics;
        for (field, v) in [
            ("diagnostics.bound_factor", d.bound_factor),
            ("diagnostics.curvature_bound", d.curvature_bound),
            ("diagnostics.diameter_bound", d.diameter_bound),
            ("diagnostics.volume_floor", d.volume_floor),
            ("diagnostics.growth_factor", d.growth_factor),
            ("diagnostics.moser_lag", d.moser_lag),
        ] {
            if let Some(v) = v {
                positive(field, v)?;
            }
        }
        if let Some(b) = d.bound_factor {
            if b < 1.0 {
                return Err(invalid("diagnostics.bound_factor", format!("must be at least 1, got {b}")));
            }
        }
        let t = &self.tolerances;
        for (field, v) in [
            ("tolerances.identity", t.identity),
            ("tolerances.inequality", t.inequality),
            ("tolerances.monotonicity", t.monotonicity),
            ("tolerances.conservation", t.conservation),
            ("tolerances.dw_agreement", t.dw_agreement),
            ("tolerances.gauss_bonnet", t.gauss_bonnet),
            ("tolerances.grid_convergence", t.grid_convergence),
            ("tolerances.sign", t.sign),
            ("tolerances.soliton", t.soliton),
            ("tolerances.einstein", t.einstein),
            ("tolerances.plateau_rate", t.plateau_rate),
        ] {
            if let Some(v) = v {
                positive(field, v)?;
            }
        }
        if let Some(p) = t.plateau_fraction {
            if !(p > 0.0 && p <= 1.0) {
                return Err(invalid("tolerances.plateau_fraction", format!("must lie in (0, 1], got {p}")));
            }
        }
        if let Some(p) = &self.perturbation {
            if !(p.amplitude >= 0.0 && p.amplitude < 1.0) {
                return Err(invalid("perturbation.amplitude", format!("must lie in [0, 1), got {}", p.amplitude)));
            }
            if p.modes == 0 {
                return Err(invalid("perturbation.modes", "must be positive"));
            }
        }
        positive("verify.horizon", self.verify.horizon)?;
        Ok(())
    }

    pub fn flow_kind(&self) -> FlowKind {
        match self.flow.kind {
            FlowName::Tau => FlowKind::tau(Tau::new(self.flow.tau.expect("validated")).expect("validated")),
            FlowName::Ricci => FlowKind::RicciUnnormalized,
            FlowName::Normalized => FlowKind::RicciNormalized,
        }
    }

    /// Step control; `initial_volume` fills in a missing projection target.
    pub fn step_control(&self, initial_volume: f64) -> StepControl {
        let f = &self.flow;
        StepControl {
            dt: f.dt,
            method: f.method,
            adapt: f.adaptive,
            volume_target: f.volume_projection.then(|| f.volume_target.unwrap_or(initial_volume)),
            blowup_curvature: f.blowup_curvature,
        }
    }

    pub fn tolerances(&self, profile: ToleranceProfile) -> Tolerances {
        Tolerances::profile(profile).overlay(&self.tolerances, self.entropy.solver_tolerance)
    }

    /// Initial metric with the perturbation applied.
    pub fn initial_metric(&self) -> Result<Metric, ConfigError> {
        let draws = self.perturbation.as_ref().map(perturbation_draws);
        let metric: Metric = match &self.geometry {
            GeometryConfig::AxisymmetricS2 { intervals, cosine_modes } => {
                let mut modes = cosine_modes.clone();
                if let Some(d) = &draws {
                    if modes.len() < d.len() + 1 {
                        modes.resize(d.len() + 1, 0.0);
                    }
                    for (l, x) in d.iter().enumerate() {
                        modes[l + 1] += x;
                    }
                }
                AxisymmetricSphereMetric::from_profile(*intervals, |theta| {
                    modes.iter().enumerate().map(|(l, c)| c * (l as f64 * theta).cos()).sum()
                })
                .map_err(|e| invalid("geometry", e.to_string()))?
                .into()
            }
            GeometryConfig::RoundScale { dimension, scale } => {
                let factor = draws.as_ref().map_or(1.0, |d| 1.0 + d[0]);
                RoundScaleMetric::new(*dimension, scale * factor)
                    .map_err(|e| invalid("geometry", e.to_string()))?
                    .into()
            }
            GeometryConfig::HomogeneousSu2 { coefficients: [a, b, c] } => {
                let f = |i: usize| draws.as_ref().map_or(1.0, |d| 1.0 + d[i]);
                HomogeneousSu2Metric::new(a * f(0), b * f(1), c * f(2))
                    .map_err(|e| invalid("geometry", e.to_string()))?
                    .into()
            }
        };
        Ok(metric)
    }

    /// Copy with every resolution parameter refined once: twice the grid
    /// intervals, a quarter of the step and half the output interval.
    pub fn refined(&self) -> RunConfig {
        let mut c = self.clone();
        if let GeometryConfig::AxisymmetricS2 { intervals, .. } = &mut c.geometry {
            *intervals *= 2;
            c.flow.dt /= 4.0;
        } else {
            c.flow.dt /= 2.0;
        }
        c.flow.output_interval /= 2.0;
        c
    }
}

/// Uniform draws in `[−amplitude, amplitude]`: one per cosine mode `1..=modes`
/// on S², one scale factor for the round family, one per axis on SU(2).
fn perturbation_draws(p: &PerturbationConfig) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(p.seed);
    let count = p.modes.max(3);
    (0..count).map(|_| p.amplitude * rng.gen_range(-1.0..=1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[geometry]
backend = "axisymmetric_s2"
intervals = 32
cosine_modes = [0.0, 0.05]

[flow]
kind = "tau"
tau = 0.5
dt = 1e-4
horizon = 0.1
output_interval = 0.01
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.hash(), RunConfig::from_toml(&c.to_toml()).unwrap().hash());
    }

    #[test]
    fn rejects_non_positive_tau_by_field() {
        let err = RunConfig::from_toml(&BASE.replace("tau = 0.5", "tau = -1.0")).unwrap_err();
        assert!(err.to_string().starts_with("flow.tau:"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = RunConfig::from_toml(&BASE.replace("dt = 1e-4", "dt = 1e-4\nstep = 3")).unwrap_err();
        assert!(err.to_string().contains("step"), "{err}");
    }

    #[test]
    fn horizon_must_be_a_multiple_of_the_output_interval() {
        let err = RunConfig::from_toml(&BASE.replace("horizon = 0.1", "horizon = 0.105")).unwrap_err();
        assert!(err.to_string().starts_with("flow.horizon:"), "{err}");
    }

    #[test]
    fn perturbation_is_seeded() {
        let with = |seed: u64| {
            RunConfig::from_toml(&format!("{BASE}\n[perturbation]\nseed = {seed}\namplitude = 0.01\n"))
                .unwrap()
                .initial_metric()
                .unwrap()
                .unknowns()
        };
        assert_eq!(with(3), with(3));
        assert_ne!(with(3), with(4));
    }

    #[test]
    fn overrides_beat_the_profile() {
        let c = RunConfig::from_toml(&format!("{BASE}\n[tolerances]\nidentity = 0.5\n")).unwrap();
        let t = c.tolerances(ToleranceProfile::Strict);
        assert_eq!(t.identity, 0.5);
        assert_eq!(t.conservation, 1e-8);
    }
}
