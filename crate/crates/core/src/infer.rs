//! Temperature inference: indicator-cell majority-vote decoding and the
//! piecewise exponential approximation function with cross-device
//! extrapolation.

use serde::{Deserialize, Serialize};

use crate::bitmap::DecayBitmap;
use crate::enroll::{EnrollmentMode, EnrollmentTable};
use crate::error::{Error, Result};

/// Indicator cells for every adjacent temperature step of an enrollment:
/// the cells voting "current temperature is above T_i".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndicatorCellSet {
    /// Odd number of cells per step.
    pub l: usize,
    pub decay_time_s: f64,
    pub region_size_bits: u64,
    /// The ordered enrollment temperatures (m entries → m−1 steps).
    pub temps: Vec<f64>,
    /// Exactly `l` cell indices per step, ascending.
    pub steps: Vec<Vec<u64>>,
}

impl IndicatorCellSet {
    pub fn validate(&self) -> Result<()> {
        if self.l < 3 || self.l.is_multiple_of(2) {
            return Err(Error::Argument("l must be odd and >= 3".into()));
        }
        if self.temps.len() < 2 || self.steps.len() != self.temps.len() - 1 {
            return Err(Error::Argument(
                "indicator set needs m temperatures and m-1 steps".into(),
            ));
        }
        for (i, cells) in self.steps.iter().enumerate() {
            if cells.len() != self.l {
                return Err(Error::Argument(format!(
                    "step {i} stores {} cells, expected l = {}",
                    cells.len(),
                    self.l
                )));
            }
            for &c in cells {
                if c >= self.region_size_bits {
                    return Err(Error::Argument(format!("cell index {c} out of region")));
                }
            }
        }
        Ok(())
    }

    /// All stored cells across steps (l·(m−1) indices, deduplicated), i.e.
    /// what a runtime readout has to touch.
    pub fn all_cells(&self) -> Vec<u64> {
        let mut cells: Vec<u64> = self.steps.iter().flatten().copied().collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}

/// Count, per repetition pair, how often a candidate behaves like an ideal
/// indicator (no flip at the low record, flip at the high one).
fn stability_score(
    cell: u64,
    lo_reps: &[DecayBitmap],
    hi_reps: &[DecayBitmap],
) -> usize {
    lo_reps
        .iter()
        .zip(hi_reps)
        .filter(|(lo, hi)| !lo.contains(cell) && hi.contains(cell))
        .count()
}

/// Select `l` indicator cells per adjacent temperature step.
///
/// Candidates are the cells flipping at T_{i+1} but not at T_i. Among them
/// the selection prefers cells that behave correctly across all available
/// enrollment repetitions, then the lowest index; with a single
/// measurement per temperature this degenerates to lowest-index.
pub fn select_indicator_cells(table: &EnrollmentTable, l: usize) -> Result<IndicatorCellSet> {
    if l < 3 || l.is_multiple_of(2) {
        return Err(Error::Argument("l must be odd and >= 3".into()));
    }
    table.validate()?;
    if !table.has_bitmaps() {
        return Err(Error::Argument(
            "enrollment table was captured without bitmaps; re-enroll with bitmaps stored".into(),
        ));
    }
    let mut steps = Vec::with_capacity(table.records.len() - 1);
    for pair in table.records.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        let lo_bm = lo.bitmap.as_ref().expect("checked");
        let hi_bm = hi.bitmap.as_ref().expect("checked");
        let candidates = hi_bm.difference(lo_bm);
        if candidates.len() < l {
            return Err(Error::InsufficientCandidates {
                step_temp_c: lo.nominal_temp_c,
                found: candidates.len(),
                needed: l,
            });
        }
        let mut scored: Vec<(usize, u64)> = candidates
            .into_iter()
            .map(|c| (stability_score(c, &lo.rep_bitmaps, &hi.rep_bitmaps), c))
            .collect();
        // Highest stability first, lowest index on ties.
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<u64> = scored.into_iter().take(l).map(|(_, c)| c).collect();
        chosen.sort_unstable();
        steps.push(chosen);
    }
    let set = IndicatorCellSet {
        l,
        decay_time_s: table.base_decay_time_s,
        region_size_bits: table.region_size_bits,
        temps: table.temps(),
        steps,
    };
    set.validate()?;
    Ok(set)
}

/// Majority vote over `cells`: true iff strictly more than half appear in
/// the bitmap.
pub fn majority_vote(bitmap: &DecayBitmap, cells: &[u64]) -> bool {
    let hits = cells.iter().filter(|&&c| bitmap.contains(c)).count();
    2 * hits > cells.len()
}

/// Decoder output: the grid temperature plus a consistency flag for
/// non-monotone vote patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedTemperature {
    pub temp_c: f64,
    /// True when some vote below the highest passing step failed (a pattern
    /// the subset law forbids in the noiseless model).
    pub consistency_warning: bool,
}

/// Run the m−1 majority votes and return the decoded grid temperature.
///
/// The result is the temperature right above the highest step whose vote
/// says "above T_i"; T_0 if no vote passes; the enrolled maximum if all
/// pass. Non-monotone patterns decode via the highest passing step and set
/// the warning flag.
pub fn decode_temperature(bitmap: &DecayBitmap, ind: &IndicatorCellSet) -> Result<DecodedTemperature> {
    ind.validate()?;
    if bitmap.region_size_bits != ind.region_size_bits {
        return Err(Error::Argument("bitmap region does not match indicator set".into()));
    }
    if (bitmap.decay_time_s - ind.decay_time_s).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "bitmap decay time {} s does not match indicator set ({} s)",
            bitmap.decay_time_s, ind.decay_time_s
        )));
    }
    let votes: Vec<bool> = ind
        .steps
        .iter()
        .map(|cells| majority_vote(bitmap, cells))
        .collect();
    Ok(decode_votes(&votes, &ind.temps))
}

/// Cascade of step votes → grid temperature (shared by the direct decoder
/// and the collector's wire-side decoding).
pub fn decode_votes(votes: &[bool], temps: &[f64]) -> DecodedTemperature {
    let highest_passing = votes.iter().rposition(|&v| v);
    match highest_passing {
        None => DecodedTemperature {
            temp_c: temps[0],
            consistency_warning: false,
        },
        Some(h) => DecodedTemperature {
            temp_c: temps[h + 1],
            consistency_warning: votes[..h].iter().any(|&v| !v),
        },
    }
}

/// One temperature range of the approximation function with its fitted
/// constants: within [t_lo_c, t_hi_c], T ≈ c1 · e^(c2 · bf · p).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ApproxSegment {
    pub t_lo_c: f64,
    pub t_hi_c: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Piecewise exponential count→temperature model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxModel {
    pub segments: Vec<ApproxSegment>,
    /// Temperature index carried along for time-temperature conversions
    /// (the attacker's estimate; set by the caller, not derived by the fit).
    pub k: Option<f64>,
    /// Cross-device extrapolation factor; 1 for the enrollment board.
    pub p: f64,
    pub decay_time_s: f64,
    pub region_size_bits: u64,
    pub enroll_device_id: String,
    /// True when every fitted c2 is positive (temperature non-decreasing in
    /// the flip count); models failing this are flagged, not rejected.
    pub monotone: bool,
}

impl ApproxModel {
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Argument("approx model has no segments".into()));
        }
        for seg in &self.segments {
            if !(seg.t_lo_c < seg.t_hi_c) {
                return Err(Error::Argument("segment bounds out of order".into()));
            }
            if !(seg.c1 > 0.0) {
                return Err(Error::Argument("segment with non-positive c1".into()));
            }
        }
        for w in self.segments.windows(2) {
            if (w[0].t_hi_c - w[1].t_lo_c).abs() > 1e-9 {
                return Err(Error::Argument("segments must tile the range with no gaps".into()));
            }
        }
        if !(self.p > 0.0) {
            return Err(Error::Argument("extrapolation factor p must be > 0".into()));
        }
        Ok(())
    }

    pub fn min_temp_c(&self) -> f64 {
        self.segments.first().map(|s| s.t_lo_c).unwrap_or(f64::NAN)
    }

    pub fn max_temp_c(&self) -> f64 {
        self.segments.last().map(|s| s.t_hi_c).unwrap_or(f64::NAN)
    }

    pub fn with_p(&self, p: f64) -> ApproxModel {
        ApproxModel {
            p,
            ..self.clone()
        }
    }

    pub fn with_k(&self, k: f64) -> ApproxModel {
        ApproxModel {
            k: Some(k),
            ..self.clone()
        }
    }

    /// Expected enrollment-side flip count at a temperature, by inverting
    /// the fitted function on the segment containing it. This is the
    /// `bf_enr` that cross-device calibration compares an observation to.
    pub fn expected_flips(&self, temp_c: f64) -> Result<f64> {
        let seg = self
            .segments
            .iter()
            .find(|s| temp_c >= s.t_lo_c - 1e-9 && temp_c <= s.t_hi_c + 1e-9)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "temperature {temp_c} °C outside the fitted range [{}, {}]",
                    self.min_temp_c(),
                    self.max_temp_c()
                ))
            })?;
        if seg.c2 == 0.0 {
            return Err(Error::InsufficientData(
                "segment fitted with c2 = 0 cannot be inverted".into(),
            ));
        }
        Ok((temp_c / seg.c1).ln() / seg.c2)
    }
}

/// Fit the approximation function per temperature segment.
///
/// Each segment gets the least-squares solution of ln T = ln c1 + c2·bf
/// over the enrollment records falling inside it (p = 1 while fitting).
/// Records at T ≤ 0.5 °C are excluded from the log-space fit.
pub fn fit_approx_model(table: &EnrollmentTable, segment_bounds: &[f64]) -> Result<ApproxModel> {
    table.validate()?;
    if table.mode != EnrollmentMode::RealTemperature {
        return Err(Error::Argument(
            "approximation fitting needs a real-temperature enrollment".into(),
        ));
    }
    if segment_bounds.len() < 2 {
        return Err(Error::Argument("need at least two segment bounds".into()));
    }
    for w in segment_bounds.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Argument("segment bounds must be strictly increasing".into()));
        }
    }
    let (t_min, t_max) = (table.min_temp_c(), table.max_temp_c());
    if segment_bounds[0] < t_min - 1e-9
        || *segment_bounds.last().unwrap() > t_max + 1e-9
    {
        return Err(Error::Argument(format!(
            "segment bounds must lie within the enrolled range [{t_min}, {t_max}] °C"
        )));
    }

    let mut segments = Vec::with_capacity(segment_bounds.len() - 1);
    for w in segment_bounds.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let pts: Vec<(f64, f64)> = table
            .records
            .iter()
            .filter(|r| r.nominal_temp_c >= lo - 1e-9 && r.nominal_temp_c <= hi + 1e-9)
            .filter(|r| r.nominal_temp_c > 0.5)
            .map(|r| (r.mean_flip_count, r.nominal_temp_c.ln()))
            .collect();
        if pts.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "segment [{lo}, {hi}] °C holds {} fittable records, need at least 2",
                pts.len()
            )));
        }
        let n = pts.len() as f64;
        let mean_x = pts.iter().map(|(x, _)| x).sum::<f64>() / n;
        let mean_y = pts.iter().map(|(_, y)| y).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
        if sxx == 0.0 {
            return Err(Error::InsufficientData(format!(
                "segment [{lo}, {hi}] °C has no flip-count spread to fit on"
            )));
        }
        let c2 = sxy / sxx;
        let c1 = (mean_y - c2 * mean_x).exp();
        segments.push(ApproxSegment {
            t_lo_c: lo,
            t_hi_c: hi,
            c1,
            c2,
        });
    }

    let monotone = segments.iter().all(|s| s.c2 > 0.0);
    let model = ApproxModel {
        segments,
        k: None,
        p: 1.0,
        decay_time_s: table.base_decay_time_s,
        region_size_bits: table.region_size_bits,
        enroll_device_id: table.device_id.clone(),
        monotone,
    };
    model.validate()?;
    Ok(model)
}

/// Default segmentation: one segment per enrollment grid interval. Records
/// at T ≤ 0.5 °C cannot join a log-space fit, so the covered range starts
/// at the first usable record.
pub fn grid_segment_bounds(table: &EnrollmentTable) -> Vec<f64> {
    table.temps().into_iter().filter(|&t| t > 0.5).collect()
}

/// Cross-device extrapolation factor p = bf_enr(T_k) / bf_obs(T_k).
pub fn compute_p(bf_enr_at_tk: f64, bf_obs_at_tk: f64) -> Result<f64> {
    if !(bf_obs_at_tk > 0.0) {
        return Err(Error::DegenerateCalibration(
            "zero flips observed at the known temperature; it is too cold to flip cells".into(),
        ));
    }
    if !(bf_enr_at_tk > 0.0) {
        return Err(Error::Argument(
            "enrollment flip count at the known temperature must be > 0".into(),
        ));
    }
    Ok(bf_enr_at_tk / bf_obs_at_tk)
}

/// Evaluate the approximation function for a flip count.
///
/// Every segment is evaluated at x = bf·p; the segment whose output lies
/// inside its own bounds wins (lowest index on ties); if none does, the
/// segment whose output is closest to its bounds is used. The result is
/// clamped to the fitted range.
pub fn approx_temperature(model: &ApproxModel, bf: f64) -> f64 {
    let x = bf * model.p;
    let mut best: Option<(f64, f64)> = None; // (distance to own bounds, output)
    for seg in &model.segments {
        let t = seg.c1 * (seg.c2 * x).exp();
        let dist = if t < seg.t_lo_c {
            seg.t_lo_c - t
        } else if t > seg.t_hi_c {
            t - seg.t_hi_c
        } else {
            0.0
        };
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, t));
        }
        if dist == 0.0 {
            break;
        }
    }
    let (_, t) = best.expect("validated models have segments");
    t.clamp(model.min_temp_c(), model.max_temp_c())
}

/// Averaged-count variant: take several counts of the same condition and
/// look up their mean.
pub fn approx_temperature_avg(model: &ApproxModel, counts: &[u64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Argument("no counts to average".into()));
    }
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64;
    Ok(approx_temperature(model, mean))
}
