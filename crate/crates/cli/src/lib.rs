//! Batch runner for τ-flow experiments.
//!
//! A run reads a TOML [`config::RunConfig`], evolves the flow, evaluates the
//! entropy and the diagnostics, and leaves CSV series, SVG charts, a JSON
//! report, a checkpoint and a manifest of digests in its output directory.

pub mod analysis;
pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod verify;

pub use config::{RunConfig, ToleranceProfile};
pub use pipeline::{resume, run, ExitStatus, RunOutcome};
