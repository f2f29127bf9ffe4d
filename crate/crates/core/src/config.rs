//! The experiment configuration: a documented key-value file consumed by
//! every CLI subcommand and carried verbatim in service requests. One
//! master seed fans out into named sub-streams (array, enrollment, sweep,
//! spy, scenario) so composed experiments never collide on jitter draws.

use serde::{Deserialize, Serialize};

use crate::artifact::digest_hex;
use crate::defense::{AttackPathway, CoverModel, DefensePolicy};
use crate::error::{Error, Result};
use crate::kv;
use crate::params::SimParams;
use crate::seed::SeedStream;
use crate::units::parse_region_size;

/// Which enrollment flavor `enroll` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnrollKind {
    Real,
    ConstantTemp,
}

/// Full experiment configuration with every knob the toolchain understands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Region size in bits; required by every command that touches cells.
    pub region_size_bits: Option<u64>,
    pub device_id: String,
    pub params: SimParams,

    // enrollment
    pub enroll_kind: EnrollKind,
    pub temps: Option<Vec<f64>>,
    pub decay_time_s: Option<f64>,
    pub reps: usize,
    pub store_bitmaps: bool,
    pub at_temp_c: Option<f64>,
    pub base_decay_time_s: Option<f64>,
    pub k: Option<f64>,

    // inference fitting
    pub segment_bounds: Option<Vec<f64>>,
    pub l: usize,

    // sweep / k estimation
    pub sweep_times_s: Option<Vec<f64>>,

    // scenario & harness
    pub scenario: Option<String>,
    pub scenario_file: Option<String>,
    pub agent_decay_time_s: u64,
    pub io_seconds_per_256kibit: f64,
    pub region_id: String,
    pub transport_tcp: bool,
    pub known_temp_c: Option<f64>,
    pub device_lag_tau_s: Option<f64>,
    pub max_cycles: Option<u64>,

    // countermeasures
    pub cover_enabled: bool,
    pub cover: CoverModel,
    pub policy: DefensePolicy,
    pub pathway: AttackPathway,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 1,
            region_size_bits: None,
            device_id: "device0".to_string(),
            params: SimParams::default(),
            enroll_kind: EnrollKind::Real,
            temps: None,
            decay_time_s: None,
            reps: 1,
            store_bitmaps: true,
            at_temp_c: None,
            base_decay_time_s: None,
            k: None,
            segment_bounds: None,
            l: 3,
            sweep_times_s: None,
            scenario: None,
            scenario_file: None,
            agent_decay_time_s: 120,
            io_seconds_per_256kibit: 8.0,
            region_id: "r0".to_string(),
            transport_tcp: false,
            known_temp_c: None,
            device_lag_tau_s: None,
            max_cycles: None,
            cover_enabled: false,
            cover: CoverModel::default(),
            policy: DefensePolicy::default(),
            pathway: AttackPathway::RefreshDisable,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("`{v}` is not a number")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("`{v}` is not an integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("`{v}` is not a boolean"))),
    }
}

/// Temperature lists come as `lo:hi:step` ranges or comma-separated values.
pub fn parse_temp_list(key: &str, v: &str) -> Result<Vec<f64>> {
    let v = v.trim();
    if let Some((lo, rest)) = v.split_once(':') {
        let (hi, step) = rest.split_once(':').ok_or_else(|| {
            Error::config(key, format!("range must be `lo:hi:step`, got `{v}`"))
        })?;
        let lo = parse_f64(key, lo)?;
        let hi = parse_f64(key, hi)?;
        let step = parse_f64(key, step)?;
        if step <= 0.0 || hi < lo {
            return Err(Error::config(key, "range needs hi >= lo and step > 0"));
        }
        Ok(crate::enroll::temp_grid(lo, hi, step))
    } else {
        v.split(',')
            .map(|s| parse_f64(key, s))
            .collect::<Result<Vec<f64>>>()
    }
}

impl RunConfig {
    /// Parse the key-value text; unknown keys are configuration errors.
    pub fn from_kv_text(text: &str) -> Result<RunConfig> {
        let pairs = kv::parse(text)?;
        let mut cfg = RunConfig::default();
        for (key, v) in &pairs {
            match key.as_str() {
                "master_seed" => cfg.master_seed = parse_u64(key, v)?,
                "region_size" => cfg.region_size_bits = Some(parse_region_size(v)?),
                "device_id" => cfg.device_id = v.clone(),
                "ref_temp_c" => cfg.params.ref_temp_c = parse_f64(key, v)?,
                "k_true" => cfg.params.k_true = parse_f64(key, v)?,
                "retention_log_mean" => cfg.params.retention_log_mean = parse_f64(key, v)?,
                "retention_log_sigma" => cfg.params.retention_log_sigma = parse_f64(key, v)?,
                "noise_sigma" => cfg.params.noise_sigma = parse_f64(key, v)?,
                "time_jitter_s" => cfg.params.time_jitter_s = parse_f64(key, v)?,
                "charged_fraction" => cfg.params.charged_fraction = parse_f64(key, v)?,
                "flip_yield" => cfg.params.flip_yield = parse_f64(key, v)?,
                "retention_scale" => cfg.params.retention_scale = parse_f64(key, v)?,
                "min_temp_c" => cfg.params.min_temp_c = parse_f64(key, v)?,
                "max_temp_c" => cfg.params.max_temp_c = parse_f64(key, v)?,
                "max_decay_time_s" => cfg.params.max_decay_time_s = parse_f64(key, v)?,
                "enroll_mode" => {
                    cfg.enroll_kind = match v.trim() {
                        "real" => EnrollKind::Real,
                        "constant-temp" => EnrollKind::ConstantTemp,
                        other => {
                            return Err(Error::config(
                                key,
                                format!("`{other}` is not `real` or `constant-temp`"),
                            ))
                        }
                    }
                }
                "temps" => cfg.temps = Some(parse_temp_list(key, v)?),
                "decay_time_s" => cfg.decay_time_s = Some(parse_f64(key, v)?),
                "reps" => cfg.reps = parse_u64(key, v)? as usize,
                "store_bitmaps" => cfg.store_bitmaps = parse_bool(key, v)?,
                "at_temp_c" => cfg.at_temp_c = Some(parse_f64(key, v)?),
                "base_decay_time_s" => cfg.base_decay_time_s = Some(parse_f64(key, v)?),
                "k" => cfg.k = Some(parse_f64(key, v)?),
                "segments" => {
                    cfg.segment_bounds = if v.trim() == "grid" {
                        None
                    } else {
                        Some(parse_temp_list(key, v)?)
                    }
                }
                "l" => cfg.l = parse_u64(key, v)? as usize,
                "sweep_times_s" => cfg.sweep_times_s = Some(parse_temp_list(key, v)?),
                "scenario" => cfg.scenario = Some(v.clone()),
                "scenario_file" => cfg.scenario_file = Some(v.clone()),
                "agent_decay_time_s" => cfg.agent_decay_time_s = parse_u64(key, v)?,
                "io_seconds_per_256kibit" => {
                    cfg.io_seconds_per_256kibit = parse_f64(key, v)?
                }
                "region_id" => cfg.region_id = v.clone(),
                "transport" => {
                    cfg.transport_tcp = match v.trim() {
                        "loopback" => false,
                        "tcp" => true,
                        other => {
                            return Err(Error::config(
                                key,
                                format!("`{other}` is not `loopback` or `tcp`"),
                            ))
                        }
                    }
                }
                "known_temp_c" => cfg.known_temp_c = Some(parse_f64(key, v)?),
                "device_lag_tau_s" => cfg.device_lag_tau_s = Some(parse_f64(key, v)?),
                "max_cycles" => cfg.max_cycles = Some(parse_u64(key, v)?),
                "cover" => cfg.cover_enabled = parse_bool(key, v)?,
                "cover_offset_c" => cfg.cover.offset_c = parse_f64(key, v)?,
                "cover_slope_gain" => cfg.cover.slope_gain = parse_f64(key, v)?,
                "cover_ref_temp_c" => cfg.cover.ref_temp_c = parse_f64(key, v)?,
                "cover_self_heat_c" => cfg.cover.self_heat_c = parse_f64(key, v)?,
                "refresh_locked" => cfg.policy.refresh_locked = parse_bool(key, v)?,
                "zero_on_wake" => cfg.policy.zero_on_wake = parse_bool(key, v)?,
                "pathway" => {
                    cfg.pathway = match v.trim() {
                        "refresh-disable" => AttackPathway::RefreshDisable,
                        "sleep-mode" => AttackPathway::SleepMode,
                        other => {
                            return Err(Error::config(
                                key,
                                format!("`{other}` is not `refresh-disable` or `sleep-mode`"),
                            ))
                        }
                    }
                }
                unknown => {
                    return Err(Error::config(unknown, "unknown configuration key"));
                }
            }
        }
        cfg.params.validate()?;
        cfg.cover.validate()?;
        Ok(cfg)
    }

    /// Digest of the effective configuration (after flag overrides), for
    /// artifact provenance.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        digest_hex(&json)
    }

    /// Root of the seed tree for this run.
    pub fn seed_stream(&self) -> SeedStream {
        SeedStream::new(self.master_seed)
    }

    pub fn require_region_size(&self) -> Result<u64> {
        self.region_size_bits
            .ok_or_else(|| Error::config("region_size", "missing (e.g. `region_size = 1MiB`)"))
    }

    pub fn require_temps(&self) -> Result<&[f64]> {
        self.temps
            .as_deref()
            .ok_or_else(|| Error::config("temps", "missing (e.g. `temps = 20:45:1`)"))
    }

    pub fn require_decay_time(&self) -> Result<f64> {
        self.decay_time_s
            .ok_or_else(|| Error::config("decay_time_s", "missing (e.g. `decay_time_s = 120`)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_representative_config() {
        let text = "\
# experiment
master_seed = 42
region_size = 2MiB
temps = 20:45:1
decay_time_s = 60
reps = 3
enroll_mode = real
l = 21
scenario = server-workload
cover = true
cover_offset_c = 2.5
refresh_locked = false
";
        let cfg = RunConfig::from_kv_text(text).unwrap();
        assert_eq!(cfg.master_seed, 42);
        assert_eq!(cfg.region_size_bits, Some(16_777_216));
        assert_eq!(cfg.temps.as_ref().unwrap().len(), 26);
        assert_eq!(cfg.reps, 3);
        assert_eq!(cfg.l, 21);
        assert!(cfg.cover_enabled);
        assert_eq!(cfg.cover.offset_c, 2.5);
    }

    #[test]
    fn unknown_keys_and_missing_fields_name_themselves() {
        match RunConfig::from_kv_text("regionsize = 2MiB\n") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "regionsize"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = RunConfig::from_kv_text("master_seed = 1\n").unwrap();
        match cfg.require_region_size() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "region_size"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn temp_lists_accept_ranges_and_literals() {
        assert_eq!(
            parse_temp_list("temps", "0:70:2.5").unwrap().len(),
            29
        );
        assert_eq!(
            parse_temp_list("temps", "20, 21.5, 30").unwrap(),
            vec![20.0, 21.5, 30.0]
        );
        assert!(parse_temp_list("temps", "10:0:1").is_err());
    }

    #[test]
    fn digest_tracks_effective_config() {
        let a = RunConfig::from_kv_text("master_seed = 1\n").unwrap();
        let b = RunConfig::from_kv_text("master_seed = 2\n").unwrap();
        assert_ne!(a.digest(), b.digest());
        let a2 = RunConfig::from_kv_text("master_seed = 1\n").unwrap();
        assert_eq!(a.digest(), a2.digest());
    }
}
