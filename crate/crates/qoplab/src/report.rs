//! Run reports: one JSON document per experiment run, summarizing every
//! per-flux record, fitted slopes, and the outcome of the experiment's
//! quantitative assertions.

use serde::Serialize;

/// One `C^m` error measurement.
#[derive(Debug, Clone, Serialize)]
pub struct RateEntry {
    pub test_function: String,
    pub m: usize,
    pub error: f64,
    pub oracle_error: f64,
}

/// Everything measured at a single flux value.  Cluster fields are `None`
/// when gap resolution failed at that flux (the failure itself is recorded
/// in `note` and the run's assertion outcome).
#[derive(Debug, Clone, Serialize)]
pub struct FluxRecord {
    pub p: i64,
    pub n: usize,
    /// `dense` or `iterative`.
    pub solver_path: String,
    /// Whether the decomposition came from the on-disk cache.
    pub cached: bool,
    pub dim_expected: usize,
    pub dim_observed: Option<usize>,
    pub cluster_width: Option<f64>,
    pub next_eigenvalue: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rate_errors: Vec<RateEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplier_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A least-squares slope with its goodness of fit.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeRecord {
    pub label: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// The full outcome of one experiment run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub config_hash: String,
    pub records: Vec<FluxRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub slopes: Vec<SlopeRecord>,
    /// Descriptions of failed quantitative assertions; empty on success.
    pub failures: Vec<String>,
    pub passed: bool,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}
