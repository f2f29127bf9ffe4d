//! Seed-deterministic model of a DRAM region whose cells decay as a
//! function of temperature and refresh-disabled time.
//!
//! Each charged-polarity cell carries a reference retention time, stored as
//! an integer on the log lattice (ln-seconds × 2^24 at `ref_temp_c`). A
//! measurement at temperature T and decay time t flips cell i iff
//!
//! ```text
//!   ln(t) + k·(T − T_ref)  ≥  ln(retention_ref[i]) + σ_eff(t)·z(i, seed)
//! ```
//!
//! evaluated in lattice integers. Because the left side is a single integer
//! per measurement and grows monotonically in both T and t, the subset law
//! and the exact time-temperature duality (flips(T+ΔT, t) == flips(T,
//! t·e^(kΔT))) hold as set identities.

use crate::bitmap::DecayBitmap;
use crate::error::{Error, Result};
use crate::params::{SimParams, LATTICE_SCALE};
use crate::seed::{normal_draw, splitmix64, unit_open, SeedStream};

/// Lattice value marking a cell that never decays: discharged polarity, or
/// a charged cell thinned out by `flip_yield`.
const NEVER: i32 = i32::MAX;

/// A simulated DRAM region. Immutable after construction; measurements are
/// pure functions of (array, temperature, time, seed) and safe to evaluate
/// in parallel.
#[derive(Debug, Clone)]
pub struct CellArray {
    size_bits: u64,
    seed: u64,
    params: SimParams,
    /// Per-cell ln-retention on the lattice; NEVER for cells that cannot flip.
    thresholds: Vec<i32>,
    charged_cells: u64,
    decayable_cells: u64,
}

/// Log-equivalent time of a (temperature, decay time) pair, in lattice units.
/// `i64::MIN` encodes "no decay at all" (t == 0).
pub(crate) fn lambda_lattice(decay_time_s: f64, temp_c: f64, params: &SimParams) -> i64 {
    if decay_time_s <= 0.0 {
        return i64::MIN;
    }
    let lambda = decay_time_s.ln() + params.k_true * (temp_c - params.ref_temp_c);
    (lambda * LATTICE_SCALE).round() as i64
}

/// Same lattice mapping for a pre-computed log-equivalent decay time at the
/// reference temperature (used by the scenario engine, where temperature
/// varies during the decay window).
pub(crate) fn lambda_lattice_from_ln_equivalent(ln_tau_at_ref: f64) -> i64 {
    if !ln_tau_at_ref.is_finite() {
        return i64::MIN;
    }
    (ln_tau_at_ref * LATTICE_SCALE).round() as i64
}

impl CellArray {
    /// Deterministically build a region: same (seed, size, params) gives a
    /// bit-identical array.
    pub fn build(seed: u64, size_bits: u64, params: SimParams) -> Result<Self> {
        if size_bits < 1 {
            return Err(Error::config("size_bits", "must be >= 1"));
        }
        params.validate()?;

        let stream = SeedStream::new(seed);
        let pol_seed = stream.derive("polarity").value();
        let ret_seed = stream.derive("retention").value();
        let yield_seed = stream.derive("yield").value();
        let ln_scale_shift = params.retention_scale.ln();

        // Per-cell draws are keyed by the cell index, so chunks can be
        // generated on any thread in any order with bit-identical results.
        let fill = |range: std::ops::Range<u64>| -> (Vec<i32>, u64, u64) {
            let mut chunk = Vec::with_capacity((range.end - range.start) as usize);
            let mut charged = 0u64;
            let mut decayable = 0u64;
            for i in range {
                let is_charged = unit_open(pol_seed, i) < params.charged_fraction;
                if !is_charged {
                    chunk.push(NEVER);
                    continue;
                }
                charged += 1;
                if params.flip_yield < 1.0 && unit_open(yield_seed, i) >= params.flip_yield {
                    chunk.push(NEVER);
                    continue;
                }
                decayable += 1;
                let z = normal_draw(ret_seed, i);
                let ln_retention =
                    params.retention_log_mean + params.retention_log_sigma * z + ln_scale_shift;
                let lattice = (ln_retention * LATTICE_SCALE).round();
                // Clamp into the representable band, keeping NEVER reserved.
                chunk.push(lattice.clamp(-(1i64 << 30) as f64, (1i64 << 30) as f64) as i32);
            }
            (chunk, charged, decayable)
        };

        let workers = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(8)
            .min(size_bits.div_ceil(1 << 20).max(1) as usize);
        let (thresholds, charged, decayable) = if workers <= 1 {
            fill(0..size_bits)
        } else {
            let step = size_bits.div_ceil(workers as u64);
            let parts = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers as u64)
                    .map(|w| {
                        let lo = w * step;
                        let hi = ((w + 1) * step).min(size_bits);
                        scope.spawn(move || fill(lo..hi))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("builder thread")).collect::<Vec<_>>()
            });
            let mut thresholds = Vec::with_capacity(size_bits as usize);
            let (mut charged, mut decayable) = (0u64, 0u64);
            for (chunk, c, d) in parts {
                thresholds.extend_from_slice(&chunk);
                charged += c;
                decayable += d;
            }
            (thresholds, charged, decayable)
        };

        Ok(CellArray {
            size_bits,
            seed,
            params,
            thresholds,
            charged_cells: charged,
            decayable_cells: decayable,
        })
    }

    pub fn size_bits(&self) -> u64 {
        self.size_bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Cells whose logical 0 maps to the charged state.
    pub fn charged_cells(&self) -> u64 {
        self.charged_cells
    }

    /// Charged cells that can actually decay (after `flip_yield` thinning).
    pub fn decayable_cells(&self) -> u64 {
        self.decayable_cells
    }

    /// Reference retention time in seconds at `ref_temp_c`, for charged
    /// decayable cells.
    pub fn retention_ref_s(&self, index: u64) -> Option<f64> {
        match self.thresholds.get(index as usize) {
            Some(&t) if t != NEVER => Some((t as f64 / LATTICE_SCALE).exp()),
            _ => None,
        }
    }

    fn check_temp(&self, temp_c: f64) -> Result<()> {
        if !temp_c.is_finite() || temp_c < self.params.min_temp_c || temp_c > self.params.max_temp_c
        {
            return Err(Error::Range(format!(
                "temperature {temp_c} °C outside validity range [{}, {}] °C",
                self.params.min_temp_c, self.params.max_temp_c
            )));
        }
        Ok(())
    }

    /// Per-cell flip predicate; deterministic in (cell, measurement seed).
    #[inline]
    fn cell_flips(&self, index: usize, lambda: i64, sigma: f64, jitter_seed: u64) -> bool {
        let thr = self.thresholds[index];
        if thr == NEVER {
            return false;
        }
        let d = lambda - thr as i64;
        if sigma == 0.0 {
            return d >= 0;
        }
        let window = (8.0 * sigma * LATTICE_SCALE).ceil() as i64;
        if d >= window {
            return true;
        }
        if d < -window {
            return false;
        }
        let z = normal_draw(jitter_seed, index as u64);
        (sigma * LATTICE_SCALE * z).round() as i64 <= d
    }

    fn measure_lambda(
        &self,
        lambda: i64,
        sigma: f64,
        temp_c: f64,
        decay_time_s: f64,
        measurement_seed: u64,
    ) -> DecayBitmap {
        let jitter_seed = splitmix64(measurement_seed ^ 0x6a69_7474_6572_0001);
        let flipped = if lambda == i64::MIN {
            Vec::new()
        } else {
            // The flip predicate is per-cell, so contiguous chunks scan on
            // separate threads and concatenate in index order.
            let scan = |range: std::ops::Range<usize>| -> Vec<u64> {
                let mut out = Vec::new();
                for i in range {
                    if self.cell_flips(i, lambda, sigma, jitter_seed) {
                        out.push(i as u64);
                    }
                }
                out
            };
            let n = self.thresholds.len();
            let workers = std::thread::available_parallelism()
                .map(|w| w.get())
                .unwrap_or(1)
                .min(8)
                .min(n.div_ceil(1 << 20).max(1));
            if workers <= 1 {
                scan(0..n)
            } else {
                let step = n.div_ceil(workers);
                let parts = std::thread::scope(|scope| {
                    let handles: Vec<_> = (0..workers)
                        .map(|w| {
                            let lo = w * step;
                            let hi = ((w + 1) * step).min(n);
                            scope.spawn(move || scan(lo..hi))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("scan thread"))
                        .collect::<Vec<_>>()
                });
                parts.concat()
            }
        };
        DecayBitmap::new(
            self.size_bits,
            temp_c,
            decay_time_s,
            measurement_seed,
            flipped,
        )
        .expect("indices generated in order")
    }

    /// One decay measurement over the whole region: initialize, disable
    /// refresh for `decay_time_s` at `temp_c`, read back the flipped cells.
    pub fn decay_measure(
        &self,
        temp_c: f64,
        decay_time_s: f64,
        measurement_seed: u64,
    ) -> Result<DecayBitmap> {
        self.check_temp(temp_c)?;
        if !(decay_time_s.is_finite() && decay_time_s >= 0.0) {
            return Err(Error::Argument("decay_time_s must be finite and >= 0".into()));
        }
        let lambda = lambda_lattice(decay_time_s, temp_c, &self.params);
        let sigma = self.params.sigma_eff(decay_time_s);
        Ok(self.measure_lambda(lambda, sigma, temp_c, decay_time_s, measurement_seed))
    }

    /// Same predicate as [`decay_measure`], evaluated only at the given cell
    /// indices (the runtime indicator-cell readout: the result restricted to
    /// `cells` is identical to the full measurement restricted to `cells`).
    pub fn measure_cells(
        &self,
        temp_c: f64,
        decay_time_s: f64,
        measurement_seed: u64,
        cells: &[u64],
    ) -> Result<DecayBitmap> {
        self.check_temp(temp_c)?;
        if !(decay_time_s.is_finite() && decay_time_s >= 0.0) {
            return Err(Error::Argument("decay_time_s must be finite and >= 0".into()));
        }
        let lambda = lambda_lattice(decay_time_s, temp_c, &self.params);
        let sigma = self.params.sigma_eff(decay_time_s);
        self.measure_cells_lambda(lambda, sigma, temp_c, decay_time_s, measurement_seed, cells)
    }

    pub(crate) fn measure_cells_lambda(
        &self,
        lambda: i64,
        sigma: f64,
        temp_c: f64,
        decay_time_s: f64,
        measurement_seed: u64,
        cells: &[u64],
    ) -> Result<DecayBitmap> {
        let jitter_seed = splitmix64(measurement_seed ^ 0x6a69_7474_6572_0001);
        let mut sorted: Vec<u64> = cells.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&last) = sorted.last() {
            if last >= self.size_bits {
                return Err(Error::Argument(format!(
                    "cell index {last} out of region of {} bits",
                    self.size_bits
                )));
            }
        }
        let mut flipped = Vec::new();
        if lambda != i64::MIN {
            for &idx in &sorted {
                if self.cell_flips(idx as usize, lambda, sigma, jitter_seed) {
                    flipped.push(idx);
                }
            }
        }
        DecayBitmap::new(
            self.size_bits,
            temp_c,
            decay_time_s,
            measurement_seed,
            flipped,
        )
    }

    /// Full-region measurement for a decay window where the temperature
    /// varied; `ln_tau_at_ref` is ln of the equivalent decay time at the
    /// reference temperature, `nominal_decay_time_s` drives the noise model
    /// and the recorded metadata.
    pub(crate) fn measure_equivalent(
        &self,
        ln_tau_at_ref: f64,
        nominal_decay_time_s: f64,
        representative_temp_c: f64,
        measurement_seed: u64,
    ) -> DecayBitmap {
        let lambda = lambda_lattice_from_ln_equivalent(ln_tau_at_ref);
        let sigma = self.params.sigma_eff(nominal_decay_time_s);
        self.measure_lambda(
            lambda,
            sigma,
            representative_temp_c,
            nominal_decay_time_s,
            measurement_seed,
        )
    }
}

/// Number of flipped cells in a measurement.
pub fn count_flips(bitmap: &DecayBitmap) -> u64 {
    bitmap.count()
}

/// Equivalent decay time under the time-temperature relationship:
/// `t_sim = t_real · e^(k·ΔT)` with ΔT = from − to (a measurement at a
/// lower temperature needs a longer decay time to look the same).
pub fn equivalent_decay_time(t_real_s: f64, k: f64, delta_t_c: f64) -> f64 {
    t_real_s * (k * delta_t_c).exp()
}
