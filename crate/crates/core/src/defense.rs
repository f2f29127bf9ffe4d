//! Countermeasure models: refresh lockdown at the kernel/firmware level and
//! the cover-box thermal distortion, plus the harness that quantifies their
//! effect on attack accuracy.

use serde::{Deserialize, Serialize};

use crate::bitmap::DecayBitmap;
use crate::cell::CellArray;
use crate::error::{Error, Result};
use crate::harness::{run_scenario, CollectorConfig, RunOutcome, SpyAgentConfig, Transport};
use crate::scenario::Scenario;

/// Thermal distortion of an enclosure: a constant offset plus trapped
/// self-heating plus a slope change about a reference temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverModel {
    pub offset_c: f64,
    pub slope_gain: f64,
    pub ref_temp_c: f64,
    pub self_heat_c: f64,
}

impl Default for CoverModel {
    fn default() -> Self {
        CoverModel {
            offset_c: 2.0,
            slope_gain: 1.15,
            ref_temp_c: 25.0,
            self_heat_c: 1.0,
        }
    }
}

impl CoverModel {
    pub fn identity() -> Self {
        CoverModel {
            offset_c: 0.0,
            slope_gain: 1.0,
            ref_temp_c: 25.0,
            self_heat_c: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope_gain > 0.0) {
            return Err(Error::config("cover_slope_gain", "must be > 0"));
        }
        for (name, v) in [
            ("cover_offset_c", self.offset_c),
            ("cover_ref_temp_c", self.ref_temp_c),
            ("cover_self_heat_c", self.self_heat_c),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.offset_c == 0.0 && self.slope_gain == 1.0 && self.self_heat_c == 0.0
    }
}

/// Effective temperature a covered device experiences at a given ambient.
pub fn effective_temperature(cover: &CoverModel, ambient_c: f64) -> f64 {
    ambient_c
        + cover.offset_c
        + cover.self_heat_c
        + (cover.slope_gain - 1.0) * (ambient_c - cover.ref_temp_c)
}

/// Platform defense switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefensePolicy {
    /// The kernel/firmware refuses to disable DRAM refresh.
    pub refresh_locked: bool,
    /// Memory is zeroed whenever it wakes from the refresh-free sleep mode.
    pub zero_on_wake: bool,
}

/// How the attacker stops the refresh for the decay window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackPathway {
    /// Malicious kernel code turns the refresh off directly.
    #[default]
    RefreshDisable,
    /// The attacker forces the deep sleep mode in which refresh is off.
    SleepMode,
}

/// A decay measurement filtered through the platform's defense policy.
#[derive(Debug, Clone)]
pub enum GuardedMeasurement {
    Measured(DecayBitmap),
    /// The platform blocked the measurement; this is an outcome, not a crash.
    Refused { reason: String },
}

impl GuardedMeasurement {
    pub fn bitmap(&self) -> Option<&DecayBitmap> {
        match self {
            GuardedMeasurement::Measured(bm) => Some(bm),
            GuardedMeasurement::Refused { .. } => None,
        }
    }
}

/// Run a decay measurement under a defense policy.
///
/// `refresh_locked` refuses the kernel pathway outright. The sleep pathway
/// still decays, but with `zero_on_wake` the memory is cleared before the
/// read, so the returned bitmap is empty.
pub fn guarded_decay_measure(
    policy: &DefensePolicy,
    pathway: AttackPathway,
    array: &CellArray,
    temp_c: f64,
    decay_time_s: f64,
    measurement_seed: u64,
) -> Result<GuardedMeasurement> {
    match pathway {
        AttackPathway::RefreshDisable if policy.refresh_locked => Ok(GuardedMeasurement::Refused {
            reason: "kernel refuses to disable DRAM refresh (refresh_locked)".into(),
        }),
        AttackPathway::SleepMode if policy.zero_on_wake => {
            // The decay happened, but the wake path zeroed the region before
            // the attacker could read it.
            array.decay_measure(temp_c, decay_time_s, measurement_seed)?;
            Ok(GuardedMeasurement::Measured(DecayBitmap::new(
                array.size_bits(),
                temp_c,
                decay_time_s,
                measurement_seed,
                Vec::new(),
            )?))
        }
        _ => Ok(GuardedMeasurement::Measured(array.decay_measure(
            temp_c,
            decay_time_s,
            measurement_seed,
        )?)),
    }
}

/// Per-run error statistics against the ambient trace (what the spy is
/// actually after; a covered device no longer tracks it).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AmbientErrorStats {
    pub rows: usize,
    pub mean_c: f64,
    pub p95_c: f64,
    pub max_c: f64,
}

fn ambient_error_stats(outcome: &RunOutcome) -> Result<AmbientErrorStats> {
    let errs: Vec<f64> = outcome
        .trace
        .rows
        .iter()
        .map(|r| (r.inferred_c - r.ambient_true_c).abs())
        .collect();
    if errs.is_empty() {
        return Err(Error::Argument("defense evaluation produced no rows".into()));
    }
    let mut sorted = errs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95_idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    Ok(AmbientErrorStats {
        rows: errs.len(),
        mean_c: errs.iter().sum::<f64>() / errs.len() as f64,
        p95_c: sorted[p95_idx],
        max_c: *sorted.last().unwrap(),
    })
}

/// Degradation report: the same attack run bare and under a cover the
/// inference side does not know about.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseReport {
    pub scenario: String,
    pub cover: CoverModel,
    pub bare: AmbientErrorStats,
    pub covered: AmbientErrorStats,
    pub mean_degradation_c: f64,
    pub p95_degradation_c: f64,
}

impl DefenseReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("variant,rows,mean_abs_error_c,p95_abs_error_c,max_abs_error_c\n");
        for (name, s) in [("bare", &self.bare), ("covered", &self.covered)] {
            out.push_str(&format!(
                "{name},{},{:.4},{:.4},{:.4}\n",
                s.rows, s.mean_c, s.p95_c, s.max_c
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "scenario {}: bare mean/p95 error {:.3}/{:.3} °C, covered {:.3}/{:.3} °C \
             (degradation +{:.3}/+{:.3} °C)",
            self.scenario,
            self.bare.mean_c,
            self.bare.p95_c,
            self.covered.mean_c,
            self.covered.p95_c,
            self.mean_degradation_c,
            self.p95_degradation_c
        )
    }
}

/// Run the scenario twice with identical seeds, bare and then covered with
/// the inference model unaware, and report the accuracy loss.
pub fn evaluate_defense(
    array: &CellArray,
    scenario: &Scenario,
    cover: &CoverModel,
    agent_cfg: &SpyAgentConfig,
    collector_cfg: &CollectorConfig,
) -> Result<DefenseReport> {
    cover.validate()?;
    let mut bare_cfg = agent_cfg.clone();
    bare_cfg.cover = None;
    let bare = run_scenario(array, scenario, &bare_cfg, collector_cfg, Transport::Loopback)?;

    let mut covered_cfg = agent_cfg.clone();
    covered_cfg.cover = Some(*cover);
    let covered = run_scenario(array, scenario, &covered_cfg, collector_cfg, Transport::Loopback)?;

    let bare_stats = ambient_error_stats(&bare)?;
    let covered_stats = ambient_error_stats(&covered)?;
    Ok(DefenseReport {
        scenario: scenario.name.clone(),
        cover: *cover,
        bare: bare_stats,
        covered: covered_stats,
        mean_degradation_c: covered_stats.mean_c - bare_stats.mean_c,
        p95_degradation_c: covered_stats.p95_c - bare_stats.p95_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enroll::{enroll_real, temp_grid, EnrollOptions};
    use crate::harness::AgentMode;
    use crate::infer::{fit_approx_model, grid_segment_bounds};
    use crate::params::SimParams;
    use crate::seed::SeedStream;

    #[test]
    fn identity_cover_is_transparent() {
        let c = CoverModel::identity();
        for t in [0.0, 25.0, 47.3] {
            assert_eq!(effective_temperature(&c, t), t);
        }
        assert!(c.is_identity());
    }

    #[test]
    fn slope_term_vanishes_at_the_reference() {
        let c = CoverModel {
            offset_c: 2.0,
            slope_gain: 1.6,
            ref_temp_c: 25.0,
            self_heat_c: 1.0,
        };
        assert_eq!(effective_temperature(&c, 25.0), 28.0);
    }

    #[test]
    fn default_cover_widens_the_flip_gap_with_temperature() {
        let params = SimParams {
            noise_sigma: 0.0,
            time_jitter_s: 0.0,
            ..SimParams::default()
        };
        let array = CellArray::build(91, 1 << 21, params).unwrap();
        let cover = CoverModel::default();
        let mut last_gap = 0i64;
        for t in [20.0, 30.0, 40.0, 50.0, 60.0] {
            let bare = array.decay_measure(t, 120.0, 0).unwrap().count() as i64;
            let covered = array
                .decay_measure(effective_temperature(&cover, t), 120.0, 0)
                .unwrap()
                .count() as i64;
            let gap = covered - bare;
            assert!(gap > 0, "cover must add flips at {t} °C");
            assert!(gap > last_gap, "gap must grow with temperature at {t} °C");
            last_gap = gap;
        }
    }

    #[test]
    fn cover_monotonicity_over_random_conditions() {
        let params = SimParams {
            noise_sigma: 0.0,
            time_jitter_s: 0.0,
            ..SimParams::default()
        };
        let array = CellArray::build(17, 1 << 18, params).unwrap();
        let cover = CoverModel::default();
        for i in 0..20u64 {
            let t = 20.0 + (i as f64) * 2.0;
            let dt = 30.0 + (i as f64) * 7.0;
            let bare = array.decay_measure(t, dt, 0).unwrap();
            let covered = array
                .decay_measure(effective_temperature(&cover, t), dt, 0)
                .unwrap();
            assert!(bare.is_subset_of(&covered));
        }
    }

    #[test]
    fn identity_cover_degrades_nothing_and_default_cover_does() {
        let array = CellArray::build(3, 262_144, SimParams::default()).unwrap();
        let temps = temp_grid(20.0, 50.0, 5.0);
        let seeds = SeedStream::new(3).seeds("e", temps.len());
        let table =
            enroll_real(&array, "d", &temps, 120.0, &seeds, &EnrollOptions::default()).unwrap();
        let model = fit_approx_model(&table, &grid_segment_bounds(&table)).unwrap();
        let scenario = crate::scenario::builtin_scenario("server-workload").unwrap();
        let agent = crate::harness::SpyAgentConfig::new("dev", 120, AgentMode::CountOnly, 5);
        let collector = CollectorConfig {
            inference: crate::harness::InferenceAsset::Model(model),
            calibration: None,
        };
        let identity =
            evaluate_defense(&array, &scenario, &CoverModel::identity(), &agent, &collector)
                .unwrap();
        assert_eq!(identity.mean_degradation_c, 0.0);
        assert_eq!(identity.p95_degradation_c, 0.0);
        let default =
            evaluate_defense(&array, &scenario, &CoverModel::default(), &agent, &collector)
                .unwrap();
        assert!(default.mean_degradation_c > 0.0);
        assert!(!default.summary().is_empty());
    }

    #[test]
    fn refresh_lock_refuses_the_kernel_pathway() {
        let array = CellArray::build(1, 4096, SimParams::default()).unwrap();
        let policy = DefensePolicy {
            refresh_locked: true,
            zero_on_wake: false,
        };
        let out = guarded_decay_measure(
            &policy,
            AttackPathway::RefreshDisable,
            &array,
            40.0,
            120.0,
            7,
        )
        .unwrap();
        assert!(matches!(out, GuardedMeasurement::Refused { .. }));
        // The sleep pathway is not covered by the lock alone.
        let out =
            guarded_decay_measure(&policy, AttackPathway::SleepMode, &array, 40.0, 120.0, 7)
                .unwrap();
        assert!(out.bitmap().is_some());
    }

    #[test]
    fn zero_on_wake_returns_an_empty_bitmap() {
        let array = CellArray::build(1, 1 << 16, SimParams::default()).unwrap();
        let policy = DefensePolicy {
            refresh_locked: false,
            zero_on_wake: true,
        };
        let out =
            guarded_decay_measure(&policy, AttackPathway::SleepMode, &array, 45.0, 240.0, 7)
                .unwrap();
        let bm = out.bitmap().expect("measured, yet zeroed");
        assert!(bm.is_empty());
        // Kernel pathway unaffected when unlocked.
        let out = guarded_decay_measure(
            &policy,
            AttackPathway::RefreshDisable,
            &array,
            45.0,
            240.0,
            7,
        )
        .unwrap();
        assert!(!out.bitmap().unwrap().is_empty());
    }

    #[test]
    fn no_defense_delegates_exactly() {
        let array = CellArray::build(5, 1 << 16, SimParams::default()).unwrap();
        let direct = array.decay_measure(42.0, 120.0, 99).unwrap();
        let guarded = guarded_decay_measure(
            &DefensePolicy::default(),
            AttackPathway::RefreshDisable,
            &array,
            42.0,
            120.0,
            99,
        )
        .unwrap();
        assert_eq!(guarded.bitmap().unwrap(), &direct);
    }
}
