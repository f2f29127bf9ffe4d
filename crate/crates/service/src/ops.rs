//! The operations behind the HTTP surface: build simulated devices from a
//! RunConfig, run enrollments, fits, decodes, scenario replays and defense
//! evaluations. Everything is pure given the config, so responses are
//! deterministic and cacheable.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use decaytherm_api::*;
use decaytherm_core::cell::CellArray;
use decaytherm_core::config::{EnrollKind, RunConfig};
use decaytherm_core::defense::evaluate_defense;
use decaytherm_core::enroll::{
    enroll_constant_temp, enroll_real, estimate_k_pooled, measure_decay_sweep, EnrollOptions,
};
use decaytherm_core::error::{Error, Result};
use decaytherm_core::harness::{
    evaluate_trace, run_scenario, AgentMode, CalibrationConfig, CollectorConfig, InferenceAsset,
    SpyAgentConfig, Transport,
};
use decaytherm_core::infer::{
    approx_temperature, approx_temperature_avg, decode_temperature, fit_approx_model,
    grid_segment_bounds, select_indicator_cells, ApproxModel,
};
use decaytherm_core::scenario::{builtin_scenario, Scenario, BUILTIN_SCENARIOS};

/// Cell arrays are expensive to build (millions of lattice draws), so the
/// service keeps the most recent ones keyed by their deterministic inputs.
#[derive(Default)]
pub struct ArrayCache {
    entries: Mutex<HashMap<String, Arc<CellArray>>>,
}

impl ArrayCache {
    fn key(seed: u64, size_bits: u64, cfg: &RunConfig) -> String {
        let params = serde_json::to_string(&cfg.params).expect("params serialize");
        format!("{seed}:{size_bits}:{params}")
    }

    pub fn get_or_build(&self, cfg: &RunConfig) -> Result<Arc<CellArray>> {
        let size_bits = cfg.require_region_size()?;
        let seed = array_seed(cfg);
        let key = Self::key(seed, size_bits, cfg);
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let array = Arc::new(CellArray::build(seed, size_bits, cfg.params)?);
        let mut map = self.entries.lock().unwrap();
        if map.len() >= 6 {
            map.clear(); // coarse eviction; rebuilds are deterministic
        }
        map.insert(key, array.clone());
        Ok(array)
    }
}

/// Array seed: master seed fanned out through the cell-array stream and the
/// device identifier, so distinct devices get independent cells.
pub fn array_seed(cfg: &RunConfig) -> u64 {
    cfg.seed_stream()
        .derive("cell-array")
        .derive(&cfg.device_id)
        .value()
}

pub fn op_simulate(cache: &ArrayCache, req: &SimulateRequest) -> Result<SimulateResponse> {
    let array = cache.get_or_build(&req.config)?;
    let seed = req
        .measurement_seed
        .unwrap_or_else(|| req.config.seed_stream().derive("simulate").value());
    let bitmap = array.decay_measure(req.temp_c, req.decay_time_s, seed)?;
    Ok(SimulateResponse {
        flip_count: bitmap.count(),
        region_size_bits: array.size_bits(),
        fraction_flipped: bitmap.count() as f64 / array.size_bits() as f64,
        measurement_seed: seed,
        bitmap: req.include_bitmap.then_some(bitmap),
    })
}

fn io_overhead_s(cfg: &RunConfig, region_bits: u64) -> f64 {
    cfg.io_seconds_per_256kibit * region_bits as f64 / 262_144.0
}

pub fn op_enroll(cache: &ArrayCache, req: &EnrollRequest) -> Result<EnrollResponse> {
    let cfg = &req.config;
    let array = cache.get_or_build(cfg)?;
    let temps = cfg.require_temps()?.to_vec();
    let opts = EnrollOptions {
        reps: cfg.reps,
        store_bitmaps: cfg.store_bitmaps,
    };
    let seeds = cfg
        .seed_stream()
        .derive("enroll")
        .seeds("measurement", temps.len() * cfg.reps);
    let io = io_overhead_s(cfg, array.size_bits());
    let (table, decay_total) = match cfg.enroll_kind {
        EnrollKind::Real => {
            let t = cfg.require_decay_time()?;
            let table = enroll_real(&array, &cfg.device_id, &temps, t, &seeds, &opts)?;
            (table, t * temps.len() as f64 * cfg.reps as f64)
        }
        EnrollKind::ConstantTemp => {
            let t0 = cfg.base_decay_time_s.or(cfg.decay_time_s).ok_or_else(|| {
                Error::config("base_decay_time_s", "missing for constant-temp enrollment")
            })?;
            let at = cfg
                .at_temp_c
                .ok_or_else(|| Error::config("at_temp_c", "missing for constant-temp enrollment"))?;
            let k = cfg
                .k
                .ok_or_else(|| Error::config("k", "missing for constant-temp enrollment"))?;
            let table =
                enroll_constant_temp(&array, &cfg.device_id, t0, &temps, at, k, &seeds, &opts)?;
            let total: f64 = table
                .records
                .iter()
                .map(|r| r.decay_time_s * cfg.reps as f64)
                .sum();
            (table, total)
        }
    };
    let simulated_seconds = decay_total + io * (temps.len() * cfg.reps) as f64;
    Ok(EnrollResponse {
        table,
        simulated_seconds,
    })
}

pub fn op_sweep(cache: &ArrayCache, req: &SweepRequest) -> Result<SweepResponse> {
    let cfg = &req.config;
    let array = cache.get_or_build(cfg)?;
    let seeds = cfg
        .seed_stream()
        .derive("sweep")
        .seeds("measurement", req.decay_times_s.len());
    let sweep = measure_decay_sweep(
        &array,
        &cfg.device_id,
        req.at_temp_c,
        &req.decay_times_s,
        &seeds,
    )?;
    Ok(SweepResponse { sweep })
}

pub fn op_estimate_k(req: &EstimateKRequest) -> Result<EstimateKResponse> {
    let pairings: Vec<_> = req.pairings.iter().map(|(s, t)| (s, t)).collect();
    let k = estimate_k_pooled(&pairings)?;
    let matched: usize = req.pairings.iter().map(|(s, _)| s.records.len()).sum();
    Ok(EstimateKResponse {
        k,
        matched_pairs: matched,
    })
}

pub fn op_fit_model(req: &FitModelRequest) -> Result<FitModelResponse> {
    let bounds = match &req.segment_bounds {
        Some(b) => b.clone(),
        None => grid_segment_bounds(&req.table),
    };
    let mut model = fit_approx_model(&req.table, &bounds)?;
    model.k = req.k;
    Ok(FitModelResponse { model })
}

pub fn op_fit_indicators(req: &FitIndicatorsRequest) -> Result<FitIndicatorsResponse> {
    Ok(FitIndicatorsResponse {
        indicators: select_indicator_cells(&req.table, req.l)?,
    })
}

pub fn op_decode(req: &DecodeRequest) -> Result<DecodeResponse> {
    let mut rows = Vec::new();
    match (&req.model, &req.indicators) {
        (Some(model), None) => {
            let model = match req.p {
                Some(p) => model.with_p(p),
                None => model.clone(),
            };
            model.validate()?;
            let counts = req
                .counts
                .as_ref()
                .ok_or_else(|| Error::Argument("model decoding needs counts".into()))?;
            if req.average {
                let raw: Vec<u64> = counts.iter().map(|c| c.flip_count).collect();
                let temp_c = approx_temperature_avg(&model, &raw)?;
                rows.push(DecodeRow {
                    timestamp_s: counts.last().map(|c| c.timestamp_s).unwrap_or(0),
                    flip_count: raw.iter().sum::<u64>() / raw.len().max(1) as u64,
                    temp_c,
                    warning: false,
                });
            } else {
                for c in counts {
                    rows.push(DecodeRow {
                        timestamp_s: c.timestamp_s,
                        flip_count: c.flip_count,
                        temp_c: approx_temperature(&model, c.flip_count as f64),
                        warning: false,
                    });
                }
            }
        }
        (None, Some(ind)) => {
            let bitmap = req
                .bitmap
                .as_ref()
                .ok_or_else(|| Error::Argument("indicator decoding needs a bitmap".into()))?;
            let decoded = decode_temperature(bitmap, ind)?;
            rows.push(DecodeRow {
                timestamp_s: 0,
                flip_count: bitmap.count(),
                temp_c: decoded.temp_c,
                warning: decoded.consistency_warning,
            });
        }
        _ => {
            return Err(Error::Argument(
                "provide exactly one of `model` or `indicators`".into(),
            ))
        }
    }
    Ok(DecodeResponse { rows })
}

/// Resolve the scenario for a request: inline > named built-in.
fn resolve_scenario(cfg: &RunConfig, inline: &Option<Scenario>) -> Result<Scenario> {
    let mut scenario = match inline {
        Some(s) => s.clone(),
        None => {
            let name = cfg
                .scenario
                .as_deref()
                .ok_or_else(|| Error::config("scenario", "missing scenario name"))?;
            builtin_scenario(name)?
        }
    };
    if let Some(tau) = cfg.device_lag_tau_s {
        scenario.device_lag_tau_s = tau;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn agent_config(cfg: &RunConfig, mode: AgentMode) -> SpyAgentConfig {
    SpyAgentConfig {
        device_id: cfg.device_id.clone(),
        region_id: cfg.region_id.clone(),
        decay_time_s: cfg.agent_decay_time_s,
        io_seconds_per_256kibit: cfg.io_seconds_per_256kibit,
        mode,
        policy: cfg.policy,
        pathway: cfg.pathway,
        cover: cfg.cover_enabled.then_some(cfg.cover),
        seed: cfg.seed_stream().derive("spy").value(),
        max_cycles: cfg.max_cycles,
    }
}

/// Enroll-and-fit used when a scenario run has no explicit assets.
fn self_fit_model(cache: &ArrayCache, cfg: &RunConfig) -> Result<ApproxModel> {
    let mut ecfg = cfg.clone();
    if ecfg.temps.is_none() {
        ecfg.temps = Some(decaytherm_core::enroll::temp_grid(20.0, 45.0, 5.0));
    }
    ecfg.decay_time_s = Some(cfg.agent_decay_time_s as f64);
    ecfg.enroll_kind = EnrollKind::Real;
    let enrolled = op_enroll(
        cache,
        &EnrollRequest {
            config: ecfg.clone(),
        },
    )?;
    let bounds = match &cfg.segment_bounds {
        Some(b) => b.clone(),
        None => grid_segment_bounds(&enrolled.table),
    };
    fit_approx_model(&enrolled.table, &bounds)
}

pub fn op_scenario_run(cache: &ArrayCache, req: &ScenarioRunRequest) -> Result<ScenarioRunResponse> {
    let cfg = &req.config;
    let array = cache.get_or_build(cfg)?;
    let scenario = resolve_scenario(cfg, &req.scenario)?;

    let (inference, mode) = match (&req.model, &req.indicators) {
        (Some(m), None) => (InferenceAsset::Model(m.clone()), AgentMode::CountOnly),
        (None, Some(i)) => (
            InferenceAsset::Indicators(i.clone()),
            AgentMode::Indicator(i.clone()),
        ),
        (None, None) => (
            InferenceAsset::Model(self_fit_model(cache, cfg)?),
            AgentMode::CountOnly,
        ),
        (Some(_), Some(_)) => {
            return Err(Error::Argument(
                "provide at most one of `model` or `indicators`".into(),
            ))
        }
    };
    let agent = agent_config(cfg, mode);
    let collector = CollectorConfig {
        inference,
        calibration: cfg.known_temp_c.map(|known_temp_c| CalibrationConfig { known_temp_c }),
    };
    let transport = if cfg.transport_tcp {
        Transport::Tcp
    } else {
        Transport::Loopback
    };
    let outcome = run_scenario(&array, &scenario, &agent, &collector, transport)?;
    let summary = if outcome.trace.rows.is_empty() {
        None
    } else {
        Some(evaluate_trace(&outcome.trace)?)
    };
    Ok(ScenarioRunResponse {
        summary,
        trace: outcome.trace,
        messages_sent: outcome.messages_sent,
        refusals: outcome.refusals,
        gap_count: outcome.gap_count,
        collector_warnings: outcome.collector_warnings,
        cycle_period_s: outcome.cycle_period_s,
        p_used: outcome.p_used,
        simulated_seconds: outcome.simulated_seconds,
    })
}

pub fn op_defense_eval(cache: &ArrayCache, req: &DefenseEvalRequest) -> Result<DefenseEvalResponse> {
    let cfg = &req.config;
    let array = cache.get_or_build(cfg)?;
    let scenario = resolve_scenario(cfg, &req.scenario)?;
    let model = match &req.model {
        Some(m) => m.clone(),
        None => self_fit_model(cache, cfg)?,
    };
    let agent = agent_config(cfg, AgentMode::CountOnly);
    let collector = CollectorConfig {
        inference: InferenceAsset::Model(model),
        calibration: cfg.known_temp_c.map(|known_temp_c| CalibrationConfig { known_temp_c }),
    };
    let report = evaluate_defense(&array, &scenario, &cfg.cover, &agent, &collector)?;
    Ok(DefenseEvalResponse { report })
}

pub fn op_scenario_list() -> ScenarioListResponse {
    ScenarioListResponse {
        builtin: BUILTIN_SCENARIOS.iter().map(|s| s.to_string()).collect(),
    }
}
