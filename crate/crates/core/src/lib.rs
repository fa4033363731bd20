//! Numerical laboratory for the τ-flow `∂g/∂t = −2Ric + g/τ`.
//!
//! The crate evolves small, exactly representable geometries under the
//! τ-flow and the Ricci flows, evaluates Perelman's W-entropy and µ-functional
//! along the way, and checks the identities that tie curvature evolution,
//! entropy monotonicity and soliton limits together.

pub mod diagnostics;
pub mod entropy;
pub mod flow;
pub mod geometry;
pub mod series;

pub use geometry::{Backend, Metric, ScalarField, SymTensor, Tau};
