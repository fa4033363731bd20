//! Named scalar time series.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("series `{name}`: time {t} does not follow {last}")]
    NotIncreasing { name: String, t: f64, last: f64 },
}

/// Ordered `(t, value)` pairs with strictly increasing `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    pub units: String,
    points: Vec<(f64, f64)>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, units: impl Into<String>) -> Self {
        Self { name: name.into(), units: units.into(), points: Vec::new() }
    }

    pub fn push(&mut self, t: f64, value: f64) -> Result<(), SeriesError> {
        if let Some(&(last, _)) = self.points.last() {
            if t <= last {
                return Err(SeriesError::NotIncreasing { name: self.name.clone(), t, last });
            }
        }
        self.points.push((t, value));
        Ok(())
    }

    /// Builds a series from parallel slices; times must increase.
    pub fn from_points(
        name: impl Into<String>,
        units: impl Into<String>,
        times: &[f64],
        values: &[f64],
    ) -> Result<Self, SeriesError> {
        let mut s = Self::new(name, units);
        for (&t, &v) in times.iter().zip(values) {
            s.push(t, v)?;
        }
        Ok(s)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        self.points.last().copied()
    }

    pub fn max_abs(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max(p.1.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.points.iter().fold(f64::INFINITY, |m, p| m.min(p.1))
    }

    pub fn max_value(&self) -> f64 {
        self.points.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.1))
    }

    /// CSV with a `t,value` header, LF endings and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (t, v) in &self.points {
            writeln!(out, "{},{}", format_float(*t), format_float(*v)).expect("writing to a String");
        }
        out
    }
}

/// Scientific notation with 17 significant digits, which round-trips every `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Derivative samples on a uniform grid: centered in the interior and
/// second-order one-sided at the ends.
pub fn uniform_derivative(values: &[f64], spacing: f64) -> Vec<f64> {
    let n = values.len();
    match n {
        0 => vec![],
        1 => vec![0.0],
        2 => {
            let d = (values[1] - values[0]) / spacing;
            vec![d, d]
        }
        _ => (0..n)
            .map(|k| {
                if k == 0 {
                    (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * spacing)
                } else if k == n - 1 {
                    (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * spacing)
                } else {
                    (values[k + 1] - values[k - 1]) / (2.0 * spacing)
                }
            })
            .collect(),
    }
}

/// [`uniform_derivative`] of the samples whose consecutive differences are
/// `increments`, without forming the samples themselves.
pub fn derivative_from_increments(increments: &[f64], spacing: f64) -> Vec<f64> {
    let m = increments.len();
    match m {
        0 => vec![0.0],
        1 => vec![increments[0] / spacing; 2],
        _ => (0..=m)
            .map(|k| {
                if k == 0 {
                    (3.0 * increments[0] - increments[1]) / (2.0 * spacing)
                } else if k == m {
                    (3.0 * increments[m - 1] - increments[m - 2]) / (2.0 * spacing)
                } else {
                    (increments[k - 1] + increments[k]) / (2.0 * spacing)
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_increasing_times() {
        let mut s = TimeSeries::new("x", "1");
        s.push(0.0, 1.0).unwrap();
        assert!(s.push(0.0, 2.0).is_err());
        assert!(s.push(-1.0, 2.0).is_err());
        s.push(0.5, 2.0).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn csv_layout() {
        let s = TimeSeries::from_points("mu", "1", &[0.0, 0.1], &[-0.3, 1.0 / 3.0]).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("t,value\n"));
        assert!(!csv.contains('\r'));
        let line = csv.lines().nth(2).unwrap();
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }

    #[test]
    fn increment_derivative_matches_sample_derivative() {
        let h = 0.05;
        let v: Vec<f64> = (0..9).map(|k| (k as f64 * h).sin()).collect();
        let inc: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
        for (a, b) in derivative_from_increments(&inc, h).iter().zip(uniform_derivative(&v, h)) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_is_exact_on_quadratics() {
        let h = 0.1;
        let v: Vec<f64> = (0..7).map(|k| (k as f64 * h).powi(2)).collect();
        for (k, d) in uniform_derivative(&v, h).iter().enumerate() {
            assert!((d - 2.0 * k as f64 * h).abs() < 1e-12);
        }
    }
}
