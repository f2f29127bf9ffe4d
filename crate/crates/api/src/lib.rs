//! Request/response types of the HTTP/JSON service. Shared by the server
//! and the client so the wire stays typed end to end.

use serde::{Deserialize, Serialize};

use decaytherm_core::bitmap::DecayBitmap;
use decaytherm_core::config::RunConfig;
use decaytherm_core::defense::DefenseReport;
use decaytherm_core::enroll::{DecaySweep, EnrollmentTable};
use decaytherm_core::error::Error;
use decaytherm_core::harness::{TemperatureTrace, TraceSummary};
use decaytherm_core::infer::{ApproxModel, IndicatorCellSet};
use decaytherm_core::scenario::Scenario;

pub const API_BASE: &str = "/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VersionResponse {
    pub name: String,
    pub version: String,
}

/// Error body every endpoint returns on failure; `kind` mirrors the
/// library error taxonomy so clients can reconstruct exit codes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: String,
    pub message: String,
}

impl ApiError {
    pub fn from_core(err: &Error) -> Self {
        let kind = match err {
            Error::Config { .. } => "config",
            Error::Range(_) => "range",
            Error::Argument(_) => "argument",
            Error::InsufficientData(_) => "insufficient-data",
            Error::InsufficientCandidates { .. } => "insufficient-candidates",
            Error::UndefinedBer => "undefined-ber",
            Error::DegenerateCalibration(_) => "degenerate-calibration",
            Error::Parse { .. } => "parse",
            Error::Version(_) => "version",
            Error::Refused(_) => "refused",
            Error::Io(_) => "io",
            Error::Serialization(_) => "serialization",
        };
        ApiError {
            kind: kind.to_string(),
            message: err.to_string(),
        }
    }

    /// CLI exit-code contract: 2 config, 3 insufficient data, 4 refusal.
    pub fn exit_code(&self) -> i32 {
        match self.kind.as_str() {
            "config" => 2,
            "insufficient-data" | "insufficient-candidates" | "undefined-ber"
            | "degenerate-calibration" => 3,
            "refused" => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateRequest {
    pub config: RunConfig,
    pub temp_c: f64,
    pub decay_time_s: f64,
    /// Defaults to a seed derived from the master seed's "simulate" stream.
    pub measurement_seed: Option<u64>,
    pub include_bitmap: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub flip_count: u64,
    pub region_size_bits: u64,
    pub fraction_flipped: f64,
    pub measurement_seed: u64,
    pub bitmap: Option<DecayBitmap>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollRequest {
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub table: EnrollmentTable,
    /// Decay + io seconds the enrollment would take on hardware.
    pub simulated_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    pub config: RunConfig,
    pub at_temp_c: f64,
    pub decay_times_s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResponse {
    pub sweep: DecaySweep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateKRequest {
    pub pairings: Vec<(DecaySweep, EnrollmentTable)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateKResponse {
    pub k: f64,
    pub matched_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitModelRequest {
    pub table: EnrollmentTable,
    /// None = one segment per enrollment grid interval.
    pub segment_bounds: Option<Vec<f64>>,
    /// The attacker's temperature-index estimate to stamp on the model.
    pub k: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitModelResponse {
    pub model: ApproxModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitIndicatorsRequest {
    pub table: EnrollmentTable,
    pub l: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitIndicatorsResponse {
    pub indicators: IndicatorCellSet,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimedCount {
    pub timestamp_s: u64,
    pub flip_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub model: Option<ApproxModel>,
    pub indicators: Option<IndicatorCellSet>,
    /// Overrides the model's stored extrapolation factor.
    pub p: Option<f64>,
    pub counts: Option<Vec<TimedCount>>,
    /// Average all counts before the lookup (one output row).
    #[serde(default)]
    pub average: bool,
    pub bitmap: Option<DecayBitmap>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecodeRow {
    pub timestamp_s: u64,
    pub flip_count: u64,
    pub temp_c: f64,
    pub warning: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub rows: Vec<DecodeRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRunRequest {
    pub config: RunConfig,
    /// Explicit inference assets; when both are None the service enrolls
    /// and fits a model from the config itself (self-contained run).
    pub model: Option<ApproxModel>,
    pub indicators: Option<IndicatorCellSet>,
    /// Inline scenario; otherwise config.scenario names a built-in.
    pub scenario: Option<Scenario>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRunResponse {
    pub trace: TemperatureTrace,
    /// None when the run produced no rows (e.g. a refused attack).
    pub summary: Option<TraceSummary>,
    pub messages_sent: u64,
    pub refusals: u64,
    pub gap_count: u64,
    pub collector_warnings: u64,
    pub cycle_period_s: f64,
    pub p_used: f64,
    pub simulated_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseEvalRequest {
    pub config: RunConfig,
    pub model: Option<ApproxModel>,
    pub scenario: Option<Scenario>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseEvalResponse {
    pub report: DefenseReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioListResponse {
    pub builtin: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        let cfg = ApiError::from_core(&Error::config("region_size", "missing"));
        assert_eq!(cfg.kind, "config");
        assert_eq!(cfg.exit_code(), 2);
        let ins = ApiError::from_core(&Error::InsufficientData("x".into()));
        assert_eq!(ins.exit_code(), 3);
        let refused = ApiError::from_core(&Error::Refused("locked".into()));
        assert_eq!(refused.exit_code(), 4);
        let other = ApiError::from_core(&Error::Argument("x".into()));
        assert_eq!(other.exit_code(), 1);
    }
}
