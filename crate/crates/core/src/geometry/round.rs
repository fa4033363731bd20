//! Round spheres of arbitrary radius, `g = c · g_round(Sⁿ)`.

use std::f64::consts::PI;

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundScaleMetric {
    dim: usize,
    scale: f64,
}

impl RoundScaleMetric {
    pub fn new(dim: usize, scale: f64) -> Result<Self, GeometryError> {
        if dim < 2 {
            return Err(GeometryError::InvalidMetric(format!("dimension must be at least 2, got {dim}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeometryError::InvalidMetric(format!("scale must be positive and finite, got {scale}")));
        }
        Ok(Self { dim, scale })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Ricci eigenvalue `(n − 1)/c` in an orthonormal frame.
    pub fn ricci_eigenvalue(&self) -> f64 {
        (self.dim as f64 - 1.0) / self.scale
    }

    pub fn scalar_curvature(&self) -> f64 {
        self.dim as f64 * self.ricci_eigenvalue()
    }

    pub fn volume(&self) -> f64 {
        self.scale.powf(0.5 * self.dim as f64) * unit_sphere_volume(self.dim)
    }

    pub fn diameter(&self) -> f64 {
        PI * self.scale.sqrt()
    }

    /// `|Rm| = √(2n(n−1)) / c` for constant sectional curvature `1/c`.
    pub fn curvature_norm(&self) -> f64 {
        let n = self.dim as f64;
        (2.0 * n * (n - 1.0)).sqrt() / self.scale
    }
}

/// Volume of the unit sphere `Sⁿ ⊂ ℝⁿ⁺¹`.
pub fn unit_sphere_volume(dim: usize) -> f64 {
    // ω_n = 2π/(n−1) · ω_{n−2}, seeded by ω_0 = 2, ω_1 = 2π
    let mut vol = if dim.is_multiple_of(2) { 2.0 } else { 2.0 * PI };
    let mut k = if dim.is_multiple_of(2) { 0 } else { 1 };
    while k < dim {
        k += 2;
        vol *= 2.0 * PI / (k as f64 - 1.0);
    }
    vol
}
