//! Simulator model parameters and their validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-point scale for the log-equivalent-time lattice: ln-seconds × 2^24.
///
/// All flip decisions happen on this integer lattice, which is what makes
/// the time-temperature duality and the subset law hold as exact set
/// identities rather than up-to-float-rounding approximations.
pub const LATTICE_SCALE: f64 = 16_777_216.0; // 2^24

/// Physical model parameters of a simulated DRAM region.
///
/// Retention times are log-normal in seconds at `ref_temp_c`; shifting the
/// temperature by ΔT is equivalent to scaling the decay time by
/// `e^(k_true·ΔT)`. The defaults are calibrated so that fractional flips at
/// (40 °C, 120 s) land around 5e-4 and a 2 MiB region offers tens of
/// candidate indicator cells per 1 °C step at 60 s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Reference temperature T_ref in °C at which retention times are drawn.
    pub ref_temp_c: f64,
    /// Ground-truth temperature index in 1/°C.
    pub k_true: f64,
    /// Mean of ln(retention seconds) at T_ref.
    pub retention_log_mean: f64,
    /// Std-dev of ln(retention seconds) at T_ref.
    pub retention_log_sigma: f64,
    /// Per-cell, per-measurement multiplicative retention jitter in the log
    /// domain (dimensionless sigma).
    pub noise_sigma: f64,
    /// Additive decay-time jitter in seconds; contributes `time_jitter_s/t`
    /// to the effective log-domain sigma, so longer decay times measure
    /// more reliably.
    pub time_jitter_s: f64,
    /// Probability that a cell maps logical 0 to the charged state.
    pub charged_fraction: f64,
    /// Fraction of charged cells that ever decay; models board-to-board
    /// absolute flip-count differences (a 0.8 board shows 20% fewer flips
    /// at every temperature).
    pub flip_yield: f64,
    /// Multiplicative scaling of all retention times (cross-device knob).
    pub retention_scale: f64,
    /// Declared validity range of the simulator in °C.
    pub min_temp_c: f64,
    pub max_temp_c: f64,
    /// Largest decay time constant-temperature enrollment may request.
    pub max_decay_time_s: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            ref_temp_c: 25.0,
            k_true: 0.07,
            retention_log_mean: 13.8,
            retention_log_sigma: 2.6,
            noise_sigma: 0.004,
            time_jitter_s: 0.35,
            charged_fraction: 0.5,
            flip_yield: 1.0,
            retention_scale: 1.0,
            min_temp_c: -20.0,
            max_temp_c: 90.0,
            max_decay_time_s: 3600.0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_true.is_finite() && self.k_true > 0.0) {
            return Err(Error::config("k_true", "must be finite and > 0"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.time_jitter_s.is_finite() && self.time_jitter_s >= 0.0) {
            return Err(Error::config("time_jitter_s", "must be finite and >= 0"));
        }
        if !self.retention_log_mean.is_finite() {
            return Err(Error::config("retention_log_mean", "must be finite"));
        }
        if !(self.retention_log_sigma.is_finite() && self.retention_log_sigma > 0.0) {
            return Err(Error::config("retention_log_sigma", "must be finite and > 0"));
        }
        if !(self.charged_fraction > 0.0 && self.charged_fraction < 1.0) {
            return Err(Error::config("charged_fraction", "must be in (0, 1)"));
        }
        if !(self.flip_yield > 0.0 && self.flip_yield <= 1.0) {
            return Err(Error::config("flip_yield", "must be in (0, 1]"));
        }
        if !(self.retention_scale.is_finite() && self.retention_scale > 0.0) {
            return Err(Error::config("retention_scale", "must be finite and > 0"));
        }
        if !self.ref_temp_c.is_finite() {
            return Err(Error::config("ref_temp_c", "must be finite"));
        }
        if !(self.min_temp_c < self.max_temp_c) {
            return Err(Error::config("min_temp_c", "validity range is empty"));
        }
        if !(self.max_decay_time_s.is_finite() && self.max_decay_time_s > 0.0) {
            return Err(Error::config("max_decay_time_s", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Effective log-domain jitter sigma for a measurement of decay time `t`.
    pub fn sigma_eff(&self, decay_time_s: f64) -> f64 {
        if decay_time_s <= 0.0 {
            return self.noise_sigma;
        }
        (self.noise_sigma.powi(2) + (self.time_jitter_s / decay_time_s).powi(2)).sqrt()
    }
}
