//! Metrics in three closed families and their curvature, differential
//! operators and integration.
//!
//! Tensors are stored by their components in an orthonormal frame. For the
//! diagonal families handled here that is the list of eigenvalues of the
//! endomorphism `g⁻¹S`, which makes traces and norms plain sums and keeps the
//! pole nodes of the axisymmetric grid regular.

mod axisym;
mod round;
mod su2;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use axisym::{AxisymmetricSphereMetric, SphereGrid, MIN_INTERVALS};
pub use round::{unit_sphere_volume, RoundScaleMetric};
pub use su2::HomogeneousSu2Metric;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("grid has {intervals} intervals, at least {min} are required")]
    GridTooCoarse { intervals: usize, min: usize },
    #[error("field has {found} values but the metric grid has {expected} nodes")]
    GridMismatch { expected: usize, found: usize },
    #[error("field belongs to the {found:?} backend, metric is {expected:?}")]
    BackendMismatch { expected: Backend, found: Backend },
    #[error("tau must be positive and finite, got {0}")]
    InvalidTau(f64),
}

/// The flow parameter τ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Tau(f64);

impl Tau {
    pub fn new(value: f64) -> Result<Self, GeometryError> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(GeometryError::InvalidTau(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Tau {
    type Error = GeometryError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Tau> for f64 {
    fn from(t: Tau) -> f64 {
        t.0
    }
}

/// Identifies a family and its discretization size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Backend {
    Axisymmetric { intervals: usize },
    RoundScale { dim: usize },
    Su2,
}

impl Backend {
    pub fn dim(self) -> usize {
        match self {
            Backend::Axisymmetric { .. } => 2,
            Backend::RoundScale { dim } => dim,
            Backend::Su2 => 3,
        }
    }

    pub fn nodes(self) -> usize {
        match self {
            Backend::Axisymmetric { intervals } => intervals + 1,
            _ => 1,
        }
    }
}

/// A function on the manifold. Homogeneous backends carry one frame-constant value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRecord")]
pub struct ScalarField {
    backend: Backend,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct FieldRecord {
    backend: Backend,
    values: Vec<f64>,
}

impl TryFrom<FieldRecord> for ScalarField {
    type Error = GeometryError;

    fn try_from(r: FieldRecord) -> Result<Self, GeometryError> {
        ScalarField::new(r.backend, r.values)
    }
}

impl ScalarField {
    pub fn new(backend: Backend, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != backend.nodes() {
            return Err(GeometryError::GridMismatch { expected: backend.nodes(), found: values.len() });
        }
        Ok(Self { backend, values })
    }

    pub fn constant(metric: &Metric, value: f64) -> Self {
        let backend = metric.backend();
        Self { backend, values: vec![value; backend.nodes()] }
    }

    /// Samples `f(θ)` on the axisymmetric grid; homogeneous backends take `f(0)`.
    pub fn from_colatitude(metric: &Metric, f: impl Fn(f64) -> f64) -> Self {
        let values = match metric {
            Metric::Axisymmetric(m) => m.grid().theta().iter().map(|&t| f(t)).collect(),
            _ => vec![f(0.0)],
        };
        Self { backend: metric.backend(), values }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { backend: self.backend, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self, GeometryError> {
        if other.backend != self.backend {
            return Err(GeometryError::BackendMismatch { expected: self.backend, found: other.backend });
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { backend: self.backend, values })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Symmetric 2-tensor stored by orthonormal-frame diagonal components.
#[derive(Debug, Clone, PartialEq)]
pub enum SymTensor {
    /// `(S(e_θ, e_θ), S(e_φ, e_φ))` at every node.
    Axisymmetric { theta: Vec<f64>, phi: Vec<f64> },
    /// `S = multiple · g`.
    RoundScale { dim: usize, multiple: f64 },
    /// `S(e_i, e_i)` in the orthonormal Milnor frame.
    Su2 { frame: [f64; 3] },
}

impl SymTensor {
    pub fn backend(&self) -> Backend {
        match self {
            SymTensor::Axisymmetric { theta, .. } => Backend::Axisymmetric { intervals: theta.len() - 1 },
            SymTensor::RoundScale { dim, .. } => Backend::RoundScale { dim: *dim },
            SymTensor::Su2 { .. } => Backend::Su2,
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &SymTensor, b: f64) -> Result<SymTensor, GeometryError> {
        let lin = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| a * p + b * q).collect() };
        match (self, other) {
            (SymTensor::Axisymmetric { theta: t1, phi: p1 }, SymTensor::Axisymmetric { theta: t2, phi: p2 })
                if t1.len() == t2.len() =>
            {
                Ok(SymTensor::Axisymmetric { theta: lin(t1, t2), phi: lin(p1, p2) })
            }
            (SymTensor::RoundScale { dim: n1, multiple: m1 }, SymTensor::RoundScale { dim: n2, multiple: m2 })
                if n1 == n2 =>
            {
                Ok(SymTensor::RoundScale { dim: *n1, multiple: a * m1 + b * m2 })
            }
            (SymTensor::Su2 { frame: f1 }, SymTensor::Su2 { frame: f2 }) => {
                let v = lin(f1, f2);
                Ok(SymTensor::Su2 { frame: [v[0], v[1], v[2]] })
            }
            _ => Err(GeometryError::BackendMismatch { expected: self.backend(), found: other.backend() }),
        }
    }

    pub fn scale(&self, a: f64) -> SymTensor {
        match self {
            SymTensor::Axisymmetric { theta, phi } => SymTensor::Axisymmetric {
                theta: theta.iter().map(|x| a * x).collect(),
                phi: phi.iter().map(|x| a * x).collect(),
            },
            SymTensor::RoundScale { dim, multiple } => SymTensor::RoundScale { dim: *dim, multiple: a * multiple },
            SymTensor::Su2 { frame } => SymTensor::Su2 { frame: frame.map(|x| a * x) },
        }
    }

    /// Pointwise `tr_g S`.
    pub fn trace(&self) -> ScalarField {
        let backend = self.backend();
        let values = match self {
            SymTensor::Axisymmetric { theta, phi } => theta.iter().zip(phi).map(|(a, b)| a + b).collect(),
            SymTensor::RoundScale { dim, multiple } => vec![*dim as f64 * multiple],
            SymTensor::Su2 { frame } => vec![frame.iter().sum()],
        };
        ScalarField { backend, values }
    }

    /// Pointwise `|S|²_g = g^{ip} g^{jq} S_ij S_pq`.
    pub fn norm_squared(&self) -> ScalarField {
        let backend = self.backend();
        let values = match self {
            SymTensor::Axisymmetric { theta, phi } => theta.iter().zip(phi).map(|(a, b)| a * a + b * b).collect(),
            SymTensor::RoundScale { dim, multiple } => vec![*dim as f64 * multiple * multiple],
            SymTensor::Su2 { frame } => vec![frame.iter().map(|x| x * x).sum()],
        };
        ScalarField { backend, values }
    }

    /// Largest absolute frame component.
    pub fn max_abs_component(&self) -> f64 {
        match self {
            SymTensor::Axisymmetric { theta, phi } => theta.iter().chain(phi).fold(0.0, |m, x| m.max(x.abs())),
            SymTensor::RoundScale { multiple, .. } => multiple.abs(),
            SymTensor::Su2 { frame } => frame.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// A Riemannian metric from one of the supported families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MetricRecord", try_from = "MetricRecord")]
pub enum Metric {
    Axisymmetric(AxisymmetricSphereMetric),
    RoundScale(RoundScaleMetric),
    Su2(HomogeneousSu2Metric),
}

impl From<AxisymmetricSphereMetric> for Metric {
    fn from(m: AxisymmetricSphereMetric) -> Self {
        Metric::Axisymmetric(m)
    }
}

impl From<RoundScaleMetric> for Metric {
    fn from(m: RoundScaleMetric) -> Self {
        Metric::RoundScale(m)
    }
}

impl From<HomogeneousSu2Metric> for Metric {
    fn from(m: HomogeneousSu2Metric) -> Self {
        Metric::Su2(m)
    }
}

impl Metric {
    pub fn backend(&self) -> Backend {
        match self {
            Metric::Axisymmetric(m) => Backend::Axisymmetric { intervals: m.grid().intervals() },
            Metric::RoundScale(m) => Backend::RoundScale { dim: m.dim() },
            Metric::Su2(_) => Backend::Su2,
        }
    }

    pub fn dim(&self) -> usize {
        self.backend().dim()
    }

    fn check_field(&self, phi: &ScalarField) -> Result<(), GeometryError> {
        if phi.backend != self.backend() {
            return Err(GeometryError::BackendMismatch { expected: self.backend(), found: phi.backend });
        }
        Ok(())
    }

    fn field(&self, values: Vec<f64>) -> ScalarField {
        ScalarField { backend: self.backend(), values }
    }

    pub fn scalar_curvature(&self) -> ScalarField {
        let values = match self {
            Metric::Axisymmetric(m) => m.scalar_curvature(),
            Metric::RoundScale(m) => vec![m.scalar_curvature()],
            Metric::Su2(m) => vec![m.scalar_curvature()],
        };
        self.field(values)
    }

    pub fn ricci(&self) -> SymTensor {
        match self {
            Metric::Axisymmetric(m) => {
                let half: Vec<f64> = m.scalar_curvature().iter().map(|r| 0.5 * r).collect();
                SymTensor::Axisymmetric { theta: half.clone(), phi: half }
            }
            Metric::RoundScale(m) => SymTensor::RoundScale { dim: m.dim(), multiple: m.ricci_eigenvalue() },
            Metric::Su2(m) => SymTensor::Su2 { frame: m.ricci_frame() },
        }
    }

    /// The metric itself as a tensor.
    pub fn identity(&self) -> SymTensor {
        match self {
            Metric::Axisymmetric(m) => {
                let n = m.grid().nodes();
                SymTensor::Axisymmetric { theta: vec![1.0; n], phi: vec![1.0; n] }
            }
            Metric::RoundScale(m) => SymTensor::RoundScale { dim: m.dim(), multiple: 1.0 },
            Metric::Su2(_) => SymTensor::Su2 { frame: [1.0; 3] },
        }
    }

    pub fn laplace_beltrami(&self, phi: &ScalarField) -> Result<ScalarField, GeometryError> {
        self.check_field(phi)?;
        Ok(match self {
            Metric::Axisymmetric(m) => self.field(m.laplace_beltrami(&phi.values)),
            _ => self.field(vec![0.0]),
        })
    }

    pub fn hessian(&self, phi: &ScalarField) -> Result<SymTensor, GeometryError> {
        self.check_field(phi)?;
        Ok(match self {
            Metric::Axisymmetric(m) => {
                let (theta, phi) = m.hessian(&phi.values);
                SymTensor::Axisymmetric { theta, phi }
            }
            _ => self.identity().scale(0.0),
        })
    }

    /// Nodal volume elements; they sum to [`volume`](Self::volume).
    pub fn volume_form(&self) -> ScalarField {
        let values = match self {
            Metric::Axisymmetric(m) => m.volume_form(),
            Metric::RoundScale(m) => vec![m.volume()],
            Metric::Su2(m) => vec![m.volume()],
        };
        self.field(values)
    }

    pub fn volume(&self) -> f64 {
        self.volume_form().values.iter().sum()
    }

    /// `∫ φ dV`.
    pub fn integrate(&self, phi: &ScalarField) -> Result<f64, GeometryError> {
        self.check_field(phi)?;
        Ok(self.volume_form().values.iter().zip(&phi.values).map(|(w, v)| w * v).sum())
    }

    /// `∫ |∇φ|² dV`, with the discrete form matching the Laplacian by
    /// summation by parts.
    pub fn dirichlet_energy(&self, phi: &ScalarField) -> Result<f64, GeometryError> {
        self.check_field(phi)?;
        Ok(match self {
            Metric::Axisymmetric(m) => m.dirichlet_energy(&phi.values),
            _ => 0.0,
        })
    }

    /// Average scalar curvature `r = ∫R dV / Vol`.
    pub fn mean_scalar_curvature(&self) -> f64 {
        let r = self.scalar_curvature();
        self.integrate(&r).expect("same backend") / self.volume()
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Metric::Axisymmetric(m) => m.diameter(),
            Metric::RoundScale(m) => m.diameter(),
            Metric::Su2(m) => m.diameter(),
        }
    }

    /// `T = Ric − (R/n) g`.
    pub fn traceless_ricci(&self) -> SymTensor {
        let n = self.dim() as f64;
        match self.ricci() {
            SymTensor::Axisymmetric { theta, phi } => {
                let (t, p): (Vec<f64>, Vec<f64>) = theta
                    .iter()
                    .zip(&phi)
                    .map(|(a, b)| {
                        let mean = (a + b) / n;
                        (a - mean, b - mean)
                    })
                    .unzip();
                SymTensor::Axisymmetric { theta: t, phi: p }
            }
            SymTensor::RoundScale { dim, .. } => SymTensor::RoundScale { dim, multiple: 0.0 },
            SymTensor::Su2 { frame } => {
                let mean = frame.iter().sum::<f64>() / n;
                SymTensor::Su2 { frame: frame.map(|x| x - mean) }
            }
        }
    }

    pub fn tensor_norm(&self, s: &SymTensor) -> Result<ScalarField, GeometryError> {
        if s.backend() != self.backend() {
            return Err(GeometryError::BackendMismatch { expected: self.backend(), found: s.backend() });
        }
        Ok(s.norm_squared())
    }

    /// Pointwise `|Rm|`.
    pub fn curvature_norm(&self) -> ScalarField {
        match self {
            // |Rm|² = R² in two dimensions
            Metric::Axisymmetric(_) => self.scalar_curvature().map(f64::abs),
            Metric::RoundScale(m) => self.field(vec![m.curvature_norm()]),
            Metric::Su2(m) => self.field(vec![m.curvature_norm()]),
        }
    }

    /// The homothetic metric `α g`.
    pub fn scaled(&self, alpha: f64) -> Result<Metric, GeometryError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(GeometryError::InvalidMetric(format!("scale factor must be positive, got {alpha}")));
        }
        Ok(match self {
            Metric::Axisymmetric(m) => {
                let shift = 0.5 * alpha.ln();
                Metric::Axisymmetric(m.with_exponent(m.conformal_exponent().iter().map(|u| u + shift).collect())?)
            }
            Metric::RoundScale(m) => Metric::RoundScale(RoundScaleMetric::new(m.dim(), alpha * m.scale())?),
            Metric::Su2(m) => {
                let [a, b, c] = m.coefficients();
                Metric::Su2(HomogeneousSu2Metric::new(alpha * a, alpha * b, alpha * c)?)
            }
        })
    }

    /// The reduced unknowns evolved by the flows: `u` per node, `c`, or `(A, B, C)`.
    pub fn unknowns(&self) -> Vec<f64> {
        match self {
            Metric::Axisymmetric(m) => m.conformal_exponent().to_vec(),
            Metric::RoundScale(m) => vec![m.scale()],
            Metric::Su2(m) => m.coefficients().to_vec(),
        }
    }

    /// A metric of the same family and grid with new unknowns.
    pub fn with_unknowns(&self, x: &[f64]) -> Result<Metric, GeometryError> {
        match self {
            Metric::Axisymmetric(m) => Ok(Metric::Axisymmetric(m.with_exponent(x.to_vec())?)),
            Metric::RoundScale(m) => {
                if x.len() != 1 {
                    return Err(GeometryError::GridMismatch { expected: 1, found: x.len() });
                }
                Ok(Metric::RoundScale(RoundScaleMetric::new(m.dim(), x[0])?))
            }
            Metric::Su2(_) => {
                if x.len() != 3 {
                    return Err(GeometryError::GridMismatch { expected: 3, found: x.len() });
                }
                Ok(Metric::Su2(HomogeneousSu2Metric::new(x[0], x[1], x[2])?))
            }
        }
    }

    /// Converts a tensor `S` into the rate of the unknowns under `∂g/∂t = S`.
    ///
    /// The conformal family only carries pure-trace rates, so the axisymmetric
    /// backend uses the mean frame component.
    pub fn unknown_rates(&self, s: &SymTensor) -> Result<Vec<f64>, GeometryError> {
        if s.backend() != self.backend() {
            return Err(GeometryError::BackendMismatch { expected: self.backend(), found: s.backend() });
        }
        Ok(match (self, s) {
            (Metric::Axisymmetric(_), SymTensor::Axisymmetric { theta, phi }) => {
                theta.iter().zip(phi).map(|(a, b)| 0.25 * (a + b)).collect()
            }
            (Metric::RoundScale(m), SymTensor::RoundScale { multiple, .. }) => vec![multiple * m.scale()],
            (Metric::Su2(m), SymTensor::Su2 { frame }) => {
                let c = m.coefficients();
                vec![frame[0] * c[0], frame[1] * c[1], frame[2] * c[2]]
            }
            _ => unreachable!("backend checked above"),
        })
    }

    pub fn to_record(&self) -> MetricRecord {
        MetricRecord { backend: self.backend(), unknowns: self.unknowns() }
    }

    pub fn from_record(record: &MetricRecord) -> Result<Metric, GeometryError> {
        match record.backend {
            Backend::Axisymmetric { intervals } => {
                let grid = Arc::new(SphereGrid::new(intervals)?);
                Ok(Metric::Axisymmetric(AxisymmetricSphereMetric::new(grid, record.unknowns.clone())?))
            }
            Backend::RoundScale { dim } => {
                let c = single(&record.unknowns)?;
                Ok(Metric::RoundScale(RoundScaleMetric::new(dim, c)?))
            }
            Backend::Su2 => match record.unknowns.as_slice() {
                [a, b, c] => Ok(Metric::Su2(HomogeneousSu2Metric::new(*a, *b, *c)?)),
                other => Err(GeometryError::GridMismatch { expected: 3, found: other.len() }),
            },
        }
    }
}

impl From<Metric> for MetricRecord {
    fn from(m: Metric) -> Self {
        m.to_record()
    }
}

impl TryFrom<MetricRecord> for Metric {
    type Error = GeometryError;

    fn try_from(r: MetricRecord) -> Result<Self, GeometryError> {
        Metric::from_record(&r)
    }
}

fn single(x: &[f64]) -> Result<f64, GeometryError> {
    match x {
        [c] => Ok(*c),
        other => Err(GeometryError::GridMismatch { expected: 1, found: other.len() }),
    }
}

/// Self-describing serialized form of a metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    #[serde(flatten)]
    pub backend: Backend,
    pub unknowns: Vec<f64>,
}
