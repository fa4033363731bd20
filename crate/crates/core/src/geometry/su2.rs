//! Diagonal left-invariant metrics on SU(2).
//!
//! Metrics are `A σ₁² + B σ₂² + C σ₃²` in a Milnor frame `X_i` with
//! `[X_2, X_3] = 2X_1` and cyclic, so `(1, 1, 1)` is the unit round S³.
//! With `e_i = X_i/√a_i` the orthonormal structure constants are
//! `λ_i = 2a_i/√(ABC)` and Milnor's formula gives
//! `Ric(e_1, e_1) = 2(A² − (B − C)²)/(ABC)` and cyclic permutations.

use std::f64::consts::PI;

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousSu2Metric {
    coeffs: [f64; 3],
}

impl HomogeneousSu2Metric {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, GeometryError> {
        let coeffs = [a, b, c];
        if coeffs.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(GeometryError::InvalidMetric(format!(
                "SU(2) coefficients must be positive and finite, got ({a}, {b}, {c})"
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn coefficients(&self) -> [f64; 3] {
        self.coeffs
    }

    /// Ricci eigenvalues in the orthonormal frame.
    pub fn ricci_frame(&self) -> [f64; 3] {
        let [a, b, c] = self.coeffs;
        let abc = a * b * c;
        [
            2.0 * (a * a - (b - c).powi(2)) / abc,
            2.0 * (b * b - (a - c).powi(2)) / abc,
            2.0 * (c * c - (a - b).powi(2)) / abc,
        ]
    }

    pub fn scalar_curvature(&self) -> f64 {
        self.ricci_frame().iter().sum()
    }

    /// `2π² √(ABC)`.
    pub fn volume(&self) -> f64 {
        let [a, b, c] = self.coeffs;
        2.0 * PI * PI * (a * b * c).sqrt()
    }

    /// Upper-bound proxy `π √max(A, B, C)`; exact on the round metric.
    pub fn diameter(&self) -> f64 {
        PI * self.coeffs.iter().cloned().fold(0.0, f64::max).sqrt()
    }

    /// In three dimensions the Weyl tensor vanishes and `|Rm|² = 4|Ric|² − R²`.
    pub fn curvature_norm(&self) -> f64 {
        let ric = self.ricci_frame();
        let r: f64 = ric.iter().sum();
        let ric2: f64 = ric.iter().map(|x| x * x).sum();
        (4.0 * ric2 - r * r).max(0.0).sqrt()
    }
}
