//! File formats, experiment running and offline tools around
//! `safespec-core`.
//!
//! The `safespec` binary exposes `train`, `monitor`, `oracle`, `eval` and
//! `plot`; everything it does is available here as plain functions.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod monitor;
pub mod oracle_cmd;
pub mod plot;
pub mod run;
pub mod table;

/// Overrides the output directory of `train`.
pub const OUTPUT_ENV: &str = "SAFESPEC_OUT";
