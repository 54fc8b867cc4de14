//! Experiment harness for the magnetic-projector laboratory.
//!
//! The library half of the `qoplab` binary: configuration parsing and
//! canonical hashing, an on-disk eigendecomposition cache, experiment
//! drivers that turn solved eigenproblems into CSV tables and run
//! reports, and small standalone SVG plots.
//!
//! The numerical content lives in `qoplab-core`; this crate only
//! orchestrates it.  Experiments never abort on a failed quantitative
//! assertion — every configured flux value is measured, failures are
//! recorded, and the process exit code reports the verdict (0 pass,
//! 1 quantitative failure, 2 configuration or I/O error).

pub mod cache;
pub mod config;
pub mod experiments;
pub mod plot;
pub mod report;

pub use experiments::{fit_loglog_slope, run_experiment, ExperimentOutcome};
