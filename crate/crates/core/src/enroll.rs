//! Enrollment: reference measurements mapping flip behavior to temperature,
//! taken either across real temperatures or at one temperature across decay
//! times (time-temperature equivalence), plus the validation metrics
//! (temperature-index estimation, Jaccard, BER).

use serde::{Deserialize, Serialize};

use crate::bitmap::DecayBitmap;
use crate::cell::{equivalent_decay_time, CellArray};
use crate::error::{Error, Result};

/// How an enrollment table was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnrollmentMode {
    /// One measurement per real temperature at a fixed decay time.
    RealTemperature,
    /// Decay-time sweep at one constant temperature; each record simulates
    /// a target temperature via `t_sim = t0 · e^(k·(T_i − T_0))`.
    SimulatedByDecayTime { k_used: f64, at_temp_c: f64 },
}

/// One enrollment row: a (temperature, decay time) point with its flip
/// count and, optionally, the measured bitmaps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub nominal_temp_c: f64,
    pub decay_time_s: f64,
    /// Flip count of the primary measurement (== |bitmap| when present).
    pub flip_count: u64,
    /// Mean flip count across all repetitions (== flip_count for reps = 1).
    pub mean_flip_count: f64,
    pub bitmap: Option<DecayBitmap>,
    /// Additional repetition bitmaps beyond the primary one; used to score
    /// indicator-cell stability.
    #[serde(default)]
    pub rep_bitmaps: Vec<DecayBitmap>,
}

/// Ordered list of enrollment records, sorted by nominal temperature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollmentTable {
    pub device_id: String,
    pub region_size_bits: u64,
    /// t0: the fixed decay time (real mode) or the base decay time that the
    /// simulated decay times scale from.
    pub base_decay_time_s: f64,
    pub mode: EnrollmentMode,
    pub records: Vec<EnrollmentRecord>,
}

impl EnrollmentTable {
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Argument("enrollment table has no records".into()));
        }
        for w in self.records.windows(2) {
            if !(w[0].nominal_temp_c < w[1].nominal_temp_c) {
                return Err(Error::Argument(
                    "enrollment temperatures must be strictly increasing".into(),
                ));
            }
        }
        for r in &self.records {
            if !r.nominal_temp_c.is_finite() {
                return Err(Error::Argument("non-finite enrollment temperature".into()));
            }
            if let Some(bm) = &r.bitmap {
                if bm.count() != r.flip_count {
                    return Err(Error::Argument(format!(
                        "flip_count {} disagrees with bitmap of {} flips at {} °C",
                        r.flip_count,
                        bm.count(),
                        r.nominal_temp_c
                    )));
                }
            }
            if let EnrollmentMode::SimulatedByDecayTime { k_used, at_temp_c } = self.mode {
                let expect = equivalent_decay_time(
                    self.base_decay_time_s,
                    k_used,
                    r.nominal_temp_c - at_temp_c,
                );
                if (r.decay_time_s - expect).abs() > 1.0 {
                    return Err(Error::Argument(format!(
                        "simulated decay time {} s at {} °C departs from t0·e^(kΔT) = {} s",
                        r.decay_time_s, r.nominal_temp_c, expect
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn temps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.nominal_temp_c).collect()
    }

    pub fn min_temp_c(&self) -> f64 {
        self.records.first().map(|r| r.nominal_temp_c).unwrap_or(f64::NAN)
    }

    pub fn max_temp_c(&self) -> f64 {
        self.records.last().map(|r| r.nominal_temp_c).unwrap_or(f64::NAN)
    }

    pub fn has_bitmaps(&self) -> bool {
        self.records.iter().all(|r| r.bitmap.is_some())
    }

    /// CSV export of (T, t, flip_count) for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("nominal_temp_c,decay_time_s,flip_count\n");
        for r in &self.records {
            out.push_str(&format!(
                "{:.4},{:.4},{}\n",
                r.nominal_temp_c, r.decay_time_s, r.flip_count
            ));
        }
        out
    }
}

/// Enrollment knobs beyond the grid itself.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnrollOptions {
    /// Measurements per temperature; repetitions beyond the first feed
    /// indicator-cell stability scoring and averaged counts.
    pub reps: usize,
    pub store_bitmaps: bool,
}

impl Default for EnrollOptions {
    fn default() -> Self {
        EnrollOptions {
            reps: 1,
            store_bitmaps: true,
        }
    }
}

fn check_temps(temps: &[f64]) -> Result<()> {
    if temps.len() < 2 {
        return Err(Error::Argument(format!(
            "enrollment needs at least 2 temperatures, got {}",
            temps.len()
        )));
    }
    for w in temps.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Argument(
                "enrollment temperatures must be strictly increasing".into(),
            ));
        }
    }
    Ok(())
}

fn check_seed_count(seeds: &[u64], temps: usize, reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::Argument("reps must be >= 1".into()));
    }
    if seeds.len() != temps * reps {
        return Err(Error::Argument(format!(
            "need {} measurement seeds ({} temps × {} reps), got {}",
            temps * reps,
            temps,
            reps,
            seeds.len()
        )));
    }
    Ok(())
}

fn build_record(
    array: &CellArray,
    nominal_temp_c: f64,
    measure_temp_c: f64,
    decay_time_s: f64,
    seeds: &[u64],
    opts: &EnrollOptions,
) -> Result<EnrollmentRecord> {
    let mut bitmaps = Vec::with_capacity(seeds.len());
    for &s in seeds {
        bitmaps.push(array.decay_measure(measure_temp_c, decay_time_s, s)?);
    }
    let mean =
        bitmaps.iter().map(|b| b.count() as f64).sum::<f64>() / bitmaps.len() as f64;
    let primary = bitmaps.remove(0);
    let flip_count = primary.count();
    Ok(EnrollmentRecord {
        nominal_temp_c,
        decay_time_s,
        flip_count,
        mean_flip_count: mean,
        bitmap: opts.store_bitmaps.then_some(primary),
        rep_bitmaps: if opts.store_bitmaps { bitmaps } else { Vec::new() },
    })
}

/// Enrollment at a fixed decay time and m real temperatures.
pub fn enroll_real(
    array: &CellArray,
    device_id: &str,
    temps: &[f64],
    decay_time_s: f64,
    seeds: &[u64],
    opts: &EnrollOptions,
) -> Result<EnrollmentTable> {
    check_temps(temps)?;
    check_seed_count(seeds, temps.len(), opts.reps)?;
    if !(decay_time_s.is_finite() && decay_time_s > 0.0) {
        return Err(Error::Argument("decay_time_s must be > 0".into()));
    }
    let mut records = Vec::with_capacity(temps.len());
    for (i, &t) in temps.iter().enumerate() {
        let chunk = &seeds[i * opts.reps..(i + 1) * opts.reps];
        records.push(build_record(array, t, t, decay_time_s, chunk, opts)?);
    }
    let table = EnrollmentTable {
        device_id: device_id.to_string(),
        region_size_bits: array.size_bits(),
        base_decay_time_s: decay_time_s,
        mode: EnrollmentMode::RealTemperature,
        records,
    };
    table.validate()?;
    Ok(table)
}

/// Constant-temperature enrollment: stay at `at_temp_c` and vary the decay
/// time so each record simulates one target temperature at base time t0.
pub fn enroll_constant_temp(
    array: &CellArray,
    device_id: &str,
    t0_s: f64,
    target_temps: &[f64],
    at_temp_c: f64,
    k: f64,
    seeds: &[u64],
    opts: &EnrollOptions,
) -> Result<EnrollmentTable> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Argument("temperature index k must be > 0".into()));
    }
    if !(t0_s.is_finite() && t0_s > 0.0) {
        return Err(Error::Argument("base decay time t0 must be > 0".into()));
    }
    check_temps(target_temps)?;
    check_seed_count(seeds, target_temps.len(), opts.reps)?;

    let max = array.params().max_decay_time_s;
    let mut records = Vec::with_capacity(target_temps.len());
    for (i, &target) in target_temps.iter().enumerate() {
        let t_sim = equivalent_decay_time(t0_s, k, target - at_temp_c);
        if t_sim > max {
            return Err(Error::Range(format!(
                "simulating {target} °C from {at_temp_c} °C needs a decay time of {t_sim:.1} s, \
                 above the configured maximum of {max} s"
            )));
        }
        let chunk = &seeds[i * opts.reps..(i + 1) * opts.reps];
        records.push(build_record(array, target, at_temp_c, t_sim, chunk, opts)?);
    }
    let table = EnrollmentTable {
        device_id: device_id.to_string(),
        region_size_bits: array.size_bits(),
        base_decay_time_s: t0_s,
        mode: EnrollmentMode::SimulatedByDecayTime { k_used: k, at_temp_c },
        records,
    };
    table.validate()?;
    Ok(table)
}

/// Raw decay-time sweep at one constant temperature: the input the attacker
/// actually has before knowing k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecaySweep {
    pub device_id: String,
    pub region_size_bits: u64,
    pub at_temp_c: f64,
    pub records: Vec<SweepRecord>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRecord {
    pub decay_time_s: f64,
    pub flip_count: u64,
}

/// Measure a decay-time sweep (strictly increasing times, one seed each).
pub fn measure_decay_sweep(
    array: &CellArray,
    device_id: &str,
    at_temp_c: f64,
    decay_times_s: &[f64],
    seeds: &[u64],
) -> Result<DecaySweep> {
    if decay_times_s.is_empty() {
        return Err(Error::Argument("sweep needs at least one decay time".into()));
    }
    for w in decay_times_s.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Argument(
                "sweep decay times must be strictly increasing".into(),
            ));
        }
    }
    if seeds.len() != decay_times_s.len() {
        return Err(Error::Argument(format!(
            "need {} seeds, got {}",
            decay_times_s.len(),
            seeds.len()
        )));
    }
    let mut records = Vec::with_capacity(decay_times_s.len());
    for (&t, &s) in decay_times_s.iter().zip(seeds) {
        let bm = array.decay_measure(at_temp_c, t, s)?;
        records.push(SweepRecord {
            decay_time_s: t,
            flip_count: bm.count(),
        });
    }
    Ok(DecaySweep {
        device_id: device_id.to_string(),
        region_size_bits: array.size_bits(),
        at_temp_c,
        records,
    })
}

/// Estimate the temperature index k from one sweep / real-table pairing.
///
/// For each sweep point, the real record with the most similar flip count
/// is taken as its temperature match (ties resolve to the lower
/// temperature); the pairs (ΔT', ln(t_sim/t_real)) are fit through the
/// origin by least squares.
pub fn estimate_k(sweep: &DecaySweep, real_table: &EnrollmentTable) -> Result<f64> {
    let pairs = match_pairs(sweep, real_table)?;
    fit_through_origin(&pairs)
}

/// Pooled variant over several (sweep, real table) pairings, matching the
/// aggregation across base decay times, sweep temperatures and boards.
pub fn estimate_k_pooled(pairings: &[(&DecaySweep, &EnrollmentTable)]) -> Result<f64> {
    let mut pairs = Vec::new();
    for (sweep, table) in pairings {
        pairs.extend(match_pairs(sweep, table)?);
    }
    fit_through_origin(&pairs)
}

fn match_pairs(sweep: &DecaySweep, real_table: &EnrollmentTable) -> Result<Vec<(f64, f64)>> {
    if real_table.mode != EnrollmentMode::RealTemperature {
        return Err(Error::Argument(
            "k estimation needs a real-temperature enrollment table".into(),
        ));
    }
    real_table.validate()?;
    if sweep.records.is_empty() {
        return Err(Error::InsufficientData("empty decay-time sweep".into()));
    }
    let t_real = real_table.base_decay_time_s;
    let mut pairs = Vec::with_capacity(sweep.records.len());
    for sr in &sweep.records {
        // Records are sorted by temperature, so the first minimal distance
        // is also the lowest-temperature tie-break.
        let matched = real_table
            .records
            .iter()
            .min_by_key(|r| r.flip_count.abs_diff(sr.flip_count))
            .expect("validated non-empty");
        let dt = matched.nominal_temp_c - sweep.at_temp_c;
        let y = (sr.decay_time_s / t_real).ln();
        pairs.push((dt, y));
    }
    Ok(pairs)
}

fn fit_through_origin(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "k fit needs at least 3 matched pairs, got {}",
            pairs.len()
        )));
    }
    let sxy: f64 = pairs.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "all count matches landed on the sweep temperature itself".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Jaccard index |S∩R| / |S∪R| between two flip sets; 1 when both empty.
pub fn jaccard(a: &DecayBitmap, b: &DecayBitmap) -> Result<f64> {
    if a.region_size_bits != b.region_size_bits {
        return Err(Error::Argument(format!(
            "jaccard over mismatched regions ({} vs {} bits)",
            a.region_size_bits, b.region_size_bits
        )));
    }
    let (inter, union) = a.intersection_union(b);
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Bit error rate of a spy measurement pair against an enrollment pair.
///
/// Candidates are the cells that flip at T_{i+1} but not at T_i in the
/// enrollment; a candidate is an error if it flips in the spy measurement
/// at T_i or fails to flip at T_{i+1}.
pub fn compute_ber(
    enroll_lo: &DecayBitmap,
    enroll_hi: &DecayBitmap,
    spy_lo: &DecayBitmap,
    spy_hi: &DecayBitmap,
) -> Result<f64> {
    let region = enroll_lo.region_size_bits;
    for bm in [enroll_hi, spy_lo, spy_hi] {
        if bm.region_size_bits != region {
            return Err(Error::Argument("BER over mismatched regions".into()));
        }
    }
    let candidates = enroll_hi.difference(enroll_lo);
    if candidates.is_empty() {
        return Err(Error::UndefinedBer);
    }
    let errors = candidates
        .iter()
        .filter(|&&c| spy_lo.contains(c) || !spy_hi.contains(c))
        .count();
    Ok(errors as f64 / candidates.len() as f64)
}

/// Inclusive temperature grid `start, start+step, ..., stop`.
pub fn temp_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if step <= 0.0 {
        return out;
    }
    let mut i = 0u32;
    loop {
        let t = start + f64::from(i) * step;
        if t > stop + step * 1e-9 {
            break;
        }
        out.push(t);
        i += 1;
    }
    out
}
