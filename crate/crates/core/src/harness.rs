//! End-to-end attack harness: a spy agent repeatedly measures decay on a
//! simulated device whose ambient follows a scenario, streams flip counts
//! over the line protocol to a collector, which applies an inference asset
//! and emits a temperature trace.
//!
//! The clock is virtual: a 24-hour room trace replays in well under a
//! second. Agent and collector only communicate through encoded lines, so
//! the in-process loopback and the TCP socket transport produce identical
//! traces for identical seeds.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cell::{lambda_lattice_from_ln_equivalent, CellArray};
use crate::defense::{AttackPathway, CoverModel, DefensePolicy};
use crate::error::{Error, Result};
use crate::infer::{approx_temperature, decode_votes, ApproxModel, IndicatorCellSet};
use crate::scenario::{DeviceThermal, Scenario};
use crate::seed::SeedStream;
use crate::units::BITS_PER_KIBIT;
use crate::wire::{decode_message, encode_message, SpyMessage};

/// What the agent reads out and sends each cycle.
#[derive(Debug, Clone)]
pub enum AgentMode {
    /// Whole-region flip count, one message per cycle.
    CountOnly,
    /// Read only the stored indicator cells and send one message per
    /// temperature step (`region_id` = "s<i>", count = flipped cells of
    /// that step).
    Indicator(IndicatorCellSet),
}

/// Spy agent configuration.
#[derive(Debug, Clone)]
pub struct SpyAgentConfig {
    pub device_id: String,
    pub region_id: String,
    /// Whole seconds; the wire carries milliseconds.
    pub decay_time_s: u64,
    /// Init+read overhead per 256 KiBit of region, scaling linearly.
    pub io_seconds_per_256kibit: f64,
    pub mode: AgentMode,
    pub policy: DefensePolicy,
    pub pathway: AttackPathway,
    pub cover: Option<CoverModel>,
    /// Seed stream for per-cycle measurement jitter.
    pub seed: u64,
    /// Stop after this many cycles even if the scenario has time left.
    pub max_cycles: Option<u64>,
}

impl SpyAgentConfig {
    pub fn new(device_id: &str, decay_time_s: u64, mode: AgentMode, seed: u64) -> Self {
        SpyAgentConfig {
            device_id: device_id.to_string(),
            region_id: "r0".to_string(),
            decay_time_s,
            io_seconds_per_256kibit: 8.0,
            mode,
            policy: DefensePolicy::default(),
            pathway: AttackPathway::RefreshDisable,
            cover: None,
            seed,
            max_cycles: None,
        }
    }

    /// Init + read overhead for a region, in seconds.
    pub fn io_overhead_s(&self, region_bits: u64) -> f64 {
        self.io_seconds_per_256kibit * region_bits as f64 / (256.0 * BITS_PER_KIBIT as f64)
    }
}

/// Where the agent's ground truth ends up (simulation-side knowledge; it
/// never crosses the wire).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruthRow {
    pub timestamp_s: u64,
    pub ambient_true_c: f64,
    pub device_true_c: f64,
}

/// Result of one agent run.
#[derive(Debug, Clone)]
pub struct AgentRun {
    pub messages_sent: u64,
    pub refusals: u64,
    pub cycles: u64,
    pub cycle_period_s: f64,
    pub truth: Vec<TruthRow>,
}

/// Sink for encoded lines: in-memory for tests, TCP for deployments.
pub trait LineSink {
    fn send_line(&mut self, line: &str) -> std::io::Result<()>;
}

/// Collects lines in memory (the loopback transport).
#[derive(Debug, Default)]
pub struct VecSink(pub Vec<String>);

impl LineSink for VecSink {
    fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        self.0.push(line.to_string());
        Ok(())
    }
}

/// Newline-framed TCP writer.
pub struct TcpSink {
    stream: TcpStream,
}

impl TcpSink {
    /// Connect with capped exponential backoff; transient connection
    /// failures are retried before giving up.
    pub fn connect(addr: &str, attempts: u32) -> Result<Self> {
        let mut delay = Duration::from_millis(25);
        let mut last_err = None;
        for _ in 0..attempts.max(1) {
            match TcpStream::connect(addr) {
                Ok(stream) => {
                    stream.set_nodelay(true).ok();
                    return Ok(TcpSink { stream });
                }
                Err(e) => {
                    last_err = Some(e);
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(Duration::from_millis(500));
                }
            }
        }
        Err(Error::Io(last_err.expect("attempts >= 1")))
    }
}

impl LineSink for TcpSink {
    fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        self.stream.write_all(line.as_bytes())?;
        self.stream.write_all(b"\n")?;
        self.stream.flush()
    }
}

/// Run the spy agent over a scenario, writing messages into the sink.
///
/// Cycle = init (io/2) + decay (t) + read (io/2); the cycle period is
/// t + io_overhead. Ground truth is sampled at the decay-window midpoint.
pub fn run_agent(
    array: &CellArray,
    scenario: &Scenario,
    cfg: &SpyAgentConfig,
    sink: &mut dyn LineSink,
) -> Result<AgentRun> {
    scenario.validate()?;
    if cfg.decay_time_s == 0 {
        return Err(Error::Argument("agent decay_time_s must be > 0".into()));
    }
    if let AgentMode::Indicator(ind) = &cfg.mode {
        ind.validate()?;
        if ind.region_size_bits != array.size_bits() {
            return Err(Error::Argument(
                "indicator set was built for a different region size".into(),
            ));
        }
        if (ind.decay_time_s - cfg.decay_time_s as f64).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "indicator set expects decay time {} s, agent is configured for {} s",
                ind.decay_time_s, cfg.decay_time_s
            )));
        }
    }

    let params = *array.params();
    let io = cfg.io_overhead_s(array.size_bits());
    let t = cfg.decay_time_s as f64;
    let cycle = t + io;
    let stream = SeedStream::new(cfg.seed);

    let mut run = AgentRun {
        messages_sent: 0,
        refusals: 0,
        cycles: 0,
        cycle_period_s: cycle,
        truth: Vec::new(),
    };

    // Refresh lockdown blocks the kernel pathway outright: the harness must
    // produce zero spy messages.
    if cfg.policy.refresh_locked && cfg.pathway == AttackPathway::RefreshDisable {
        run.refusals = 1;
        return Ok(run);
    }
    let zeroed = cfg.policy.zero_on_wake && cfg.pathway == AttackPathway::SleepMode;

    let mut thermal = DeviceThermal::new(scenario, cfg.cover);
    let mut seq: u64 = 0;
    let mut cycle_no: u64 = 0;
    loop {
        let start = cycle_no as f64 * cycle;
        if start + cycle > scenario.duration_s + 1e-9 {
            break;
        }
        if let Some(max) = cfg.max_cycles {
            if cycle_no >= max {
                break;
            }
        }
        thermal.advance_to(start + io / 2.0);
        let window = thermal.decay_window(t, params.k_true, params.ref_temp_c);
        if window.mid_device_c < params.min_temp_c || window.mid_device_c > params.max_temp_c {
            return Err(Error::Range(format!(
                "device temperature {:.2} °C left the simulator validity range",
                window.mid_device_c
            )));
        }
        thermal.advance_to(start + cycle);

        let timestamp_s = ((cycle_no + 1) as f64 * cycle).round() as u64;
        let mseed = stream.derive_indexed("cycle", cycle_no).value();
        let lambda = if zeroed {
            i64::MIN // memory zeroed on wake: nothing to read
        } else {
            lambda_lattice_from_ln_equivalent(window.ln_equivalent_at_ref)
        };
        let sigma = params.sigma_eff(t);

        match &cfg.mode {
            AgentMode::CountOnly => {
                let count = if zeroed {
                    0
                } else {
                    array
                        .measure_equivalent(
                            window.ln_equivalent_at_ref,
                            t,
                            window.mid_device_c,
                            mseed,
                        )
                        .count()
                };
                seq += 1;
                let msg = SpyMessage {
                    seq,
                    timestamp_s,
                    device_id: cfg.device_id.clone(),
                    region_id: cfg.region_id.clone(),
                    decay_time_ms: cfg.decay_time_s * 1000,
                    flip_count: count,
                };
                sink.send_line(&encode_message(&msg)?)?;
                run.messages_sent += 1;
            }
            AgentMode::Indicator(ind) => {
                let flips = array.measure_cells_lambda(
                    lambda,
                    sigma,
                    window.mid_device_c,
                    t,
                    mseed,
                    &ind.all_cells(),
                )?;
                for (i, cells) in ind.steps.iter().enumerate() {
                    let count = cells.iter().filter(|&&c| flips.contains(c)).count() as u64;
                    seq += 1;
                    let msg = SpyMessage {
                        seq,
                        timestamp_s,
                        device_id: cfg.device_id.clone(),
                        region_id: format!("s{i}"),
                        decay_time_ms: cfg.decay_time_s * 1000,
                        flip_count: count,
                    };
                    sink.send_line(&encode_message(&msg)?)?;
                    run.messages_sent += 1;
                }
            }
        }

        run.truth.push(TruthRow {
            timestamp_s,
            ambient_true_c: window.mid_ambient_c,
            device_true_c: window.mid_device_c,
        });
        run.cycles += 1;
        cycle_no += 1;
    }
    Ok(run)
}

/// What the collector decodes with.
#[derive(Debug, Clone)]
pub enum InferenceAsset {
    Model(ApproxModel),
    Indicators(IndicatorCellSet),
}

/// Cross-device calibration: the first message is taken at a known
/// temperature and fixes the extrapolation factor p.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub known_temp_c: f64,
}

#[derive(Debug, Clone)]
pub struct CollectorConfig {
    pub inference: InferenceAsset,
    pub calibration: Option<CalibrationConfig>,
}

/// One decoded row on the collector side (no ground truth over the wire).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CollectorRow {
    pub timestamp_s: u64,
    pub flip_metric: u64,
    pub inferred_c: f64,
    pub warning: bool,
}

/// Stream consumer applying the inference asset message by message.
pub struct Collector {
    cfg: CollectorConfig,
    p: Option<f64>,
    last_seq: Option<u64>,
    device: Option<String>,
    pending_votes: BTreeMap<u64, Vec<Option<bool>>>,
    pending_counts: BTreeMap<u64, u64>,
    pub rows: Vec<CollectorRow>,
    pub gap_count: u64,
    pub protocol_violations: u64,
    pub log: Vec<String>,
}

impl Collector {
    pub fn new(cfg: CollectorConfig) -> Result<Self> {
        match &cfg.inference {
            InferenceAsset::Model(m) => m.validate()?,
            InferenceAsset::Indicators(i) => i.validate()?,
        }
        Ok(Collector {
            cfg,
            p: None,
            last_seq: None,
            device: None,
            pending_votes: BTreeMap::new(),
            pending_counts: BTreeMap::new(),
            rows: Vec::new(),
            gap_count: 0,
            protocol_violations: 0,
            log: Vec::new(),
        })
    }

    /// The extrapolation factor in use (1.0 until calibrated).
    pub fn p_used(&self) -> f64 {
        self.p.unwrap_or(1.0)
    }

    pub fn ingest_line(&mut self, line: &str) -> Result<()> {
        let msg = decode_message(line)?;
        self.ingest(msg)
    }

    pub fn ingest(&mut self, msg: SpyMessage) -> Result<()> {
        match &self.device {
            None => self.device = Some(msg.device_id.clone()),
            Some(d) if *d != msg.device_id => {
                self.protocol_violations += 1;
                self.log
                    .push(format!("ignoring message from unexpected device {}", msg.device_id));
                return Ok(());
            }
            _ => {}
        }
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                self.protocol_violations += 1;
                self.log
                    .push(format!("non-increasing seq {} after {last}", msg.seq));
                return Ok(());
            }
            if msg.seq > last + 1 {
                let missing = msg.seq - last - 1;
                self.gap_count += missing;
                self.log
                    .push(format!("gap: {missing} message(s) missing before seq {}", msg.seq));
            }
        }
        self.last_seq = Some(msg.seq);

        match &self.cfg.inference {
            InferenceAsset::Model(model) => {
                if self.p.is_none() {
                    // A configured calibration derives p from this first
                    // message; otherwise the model's own p stands.
                    let p = match self.cfg.calibration {
                        Some(cal) => {
                            let bf_enr = model.expected_flips(cal.known_temp_c)?;
                            crate::infer::compute_p(bf_enr, msg.flip_count as f64)?
                        }
                        None => model.p,
                    };
                    self.p = Some(p);
                }
                let calibrated = model.with_p(self.p.unwrap());
                let inferred = approx_temperature(&calibrated, msg.flip_count as f64);
                self.rows.push(CollectorRow {
                    timestamp_s: msg.timestamp_s,
                    flip_metric: msg.flip_count,
                    inferred_c: inferred,
                    warning: false,
                });
            }
            InferenceAsset::Indicators(ind) => {
                let steps = ind.steps.len();
                let step_idx = msg
                    .region_id
                    .strip_prefix('s')
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&i| i < steps);
                let Some(step_idx) = step_idx else {
                    self.protocol_violations += 1;
                    self.log
                        .push(format!("unexpected region `{}` in indicator mode", msg.region_id));
                    return Ok(());
                };
                let votes = self
                    .pending_votes
                    .entry(msg.timestamp_s)
                    .or_insert_with(|| vec![None; steps]);
                votes[step_idx] = Some(2 * msg.flip_count as usize > ind.l);
                if votes.iter().all(|v| v.is_some()) {
                    let votes: Vec<bool> =
                        votes.iter().map(|v| v.unwrap()).collect();
                    let sum: u64 = self
                        .pending_counts
                        .get(&msg.timestamp_s)
                        .copied()
                        .unwrap_or(0)
                        + msg.flip_count;
                    let decoded = decode_votes(&votes, &ind.temps);
                    self.rows.push(CollectorRow {
                        timestamp_s: msg.timestamp_s,
                        flip_metric: sum,
                        inferred_c: decoded.temp_c,
                        warning: decoded.consistency_warning,
                    });
                    self.pending_votes.remove(&msg.timestamp_s);
                    self.pending_counts.remove(&msg.timestamp_s);
                } else {
                    *self.pending_counts.entry(msg.timestamp_s).or_insert(0) += msg.flip_count;
                }
            }
        }
        Ok(())
    }

    /// Flush incomplete vote groups (e.g. a gap swallowed part of a cycle).
    pub fn finish(&mut self) {
        for (ts, votes) in std::mem::take(&mut self.pending_votes) {
            let have = votes.iter().filter(|v| v.is_some()).count();
            self.log.push(format!(
                "dropping incomplete cycle at t={ts}s ({have}/{} step votes)",
                votes.len()
            ));
        }
        self.pending_counts.clear();
    }
}

/// One evaluated trace row: collector inference joined with simulation
/// ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub timestamp_s: u64,
    pub ambient_true_c: f64,
    pub device_true_c: f64,
    pub inferred_c: f64,
    pub abs_error_c: f64,
}

/// Time series of ground truth vs inference.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TemperatureTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_CSV_HEADER: &str = "timestamp_s,ambient_true_c,device_true_c,inferred_c,abs_error_c";

impl TemperatureTrace {
    /// Join collector rows with agent-side ground truth by timestamp.
    pub fn join(truth: &[TruthRow], rows: &[CollectorRow]) -> TemperatureTrace {
        let by_ts: BTreeMap<u64, &TruthRow> =
            truth.iter().map(|t| (t.timestamp_s, t)).collect();
        let rows = rows
            .iter()
            .filter_map(|r| {
                by_ts.get(&r.timestamp_s).map(|t| TraceRow {
                    timestamp_s: r.timestamp_s,
                    ambient_true_c: t.ambient_true_c,
                    device_true_c: t.device_true_c,
                    inferred_c: r.inferred_c,
                    abs_error_c: (t.device_true_c - r.inferred_c).abs(),
                })
            })
            .collect();
        TemperatureTrace { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.timestamp_s, r.ambient_true_c, r.device_true_c, r.inferred_c, r.abs_error_c
            ));
        }
        out
    }

    /// Parse a trace CSV, skipping `#` comment lines.
    pub fn from_csv(text: &str) -> Result<TemperatureTrace> {
        let mut rows = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if line != TRACE_CSV_HEADER {
                    return Err(Error::Argument(format!("unexpected trace header `{line}`")));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Argument(format!("bad trace row `{line}`")));
            }
            let parse = |i: usize| -> Result<f64> {
                fields[i]
                    .parse()
                    .map_err(|_| Error::Argument(format!("bad number `{}`", fields[i])))
            };
            rows.push(TraceRow {
                timestamp_s: fields[0]
                    .parse()
                    .map_err(|_| Error::Argument("bad timestamp".into()))?,
                ambient_true_c: parse(1)?,
                device_true_c: parse(2)?,
                inferred_c: parse(3)?,
                abs_error_c: parse(4)?,
            });
        }
        if !saw_header {
            return Err(Error::Argument("trace CSV has no header".into()));
        }
        Ok(TemperatureTrace { rows })
    }
}

/// Summary statistics of a trace.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceSummary {
    pub rows: usize,
    pub max_abs_error_c: f64,
    pub mean_abs_error_c: f64,
    pub p95_abs_error_c: f64,
    /// Cross-correlation lag of the inferred series behind the true ambient,
    /// in seconds (None when the series is too short or flat).
    pub lag_vs_ambient_s: Option<f64>,
}

/// Max/mean/p95 absolute error plus the inference lag estimate.
pub fn evaluate_trace(trace: &TemperatureTrace) -> Result<TraceSummary> {
    if trace.rows.is_empty() {
        return Err(Error::Argument("empty trace".into()));
    }
    let mut errs: Vec<f64> = trace.rows.iter().map(|r| r.abs_error_c).collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95_idx = ((0.95 * errs.len() as f64).ceil() as usize).clamp(1, errs.len()) - 1;
    Ok(TraceSummary {
        rows: trace.rows.len(),
        max_abs_error_c: *errs.last().unwrap(),
        mean_abs_error_c: mean,
        p95_abs_error_c: errs[p95_idx],
        lag_vs_ambient_s: estimate_lag(trace),
    })
}

fn estimate_lag(trace: &TemperatureTrace) -> Option<f64> {
    let n = trace.rows.len();
    if n < 4 {
        return None;
    }
    let cadence = (trace.rows[1].timestamp_s - trace.rows[0].timestamp_s) as f64;
    if cadence <= 0.0 {
        return None;
    }
    let ambient: Vec<f64> = trace.rows.iter().map(|r| r.ambient_true_c).collect();
    let inferred: Vec<f64> = trace.rows.iter().map(|r| r.inferred_c).collect();
    let corr = |shift: usize| -> Option<f64> {
        let len = n - shift;
        if len < 3 {
            return None;
        }
        let a = &ambient[..len];
        let b = &inferred[shift..];
        let ma = a.iter().sum::<f64>() / len as f64;
        let mb = b.iter().sum::<f64>() / len as f64;
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..len {
            num += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma).powi(2);
            vb += (b[i] - mb).powi(2);
        }
        if va <= 0.0 || vb <= 0.0 {
            return None;
        }
        Some(num / (va.sqrt() * vb.sqrt()))
    };
    let mut best_shift = 0usize;
    let mut best = f64::NEG_INFINITY;
    for shift in 0..=(n / 2) {
        if let Some(c) = corr(shift) {
            if c > best {
                best = c;
                best_shift = shift;
            }
        }
    }
    if best.is_finite() {
        Some(best_shift as f64 * cadence)
    } else {
        None
    }
}

/// Transport between agent and collector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// In-process line buffer.
    Loopback,
    /// Real TCP socket on a loopback ephemeral port.
    Tcp,
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: TemperatureTrace,
    pub messages_sent: u64,
    pub refusals: u64,
    pub gap_count: u64,
    pub collector_warnings: u64,
    pub cycle_period_s: f64,
    pub p_used: f64,
    /// Total simulated seconds the agent spent (decay + io).
    pub simulated_seconds: f64,
}

fn check_asset_compatibility(
    array: &CellArray,
    agent_cfg: &SpyAgentConfig,
    collector_cfg: &CollectorConfig,
) -> Result<()> {
    match &collector_cfg.inference {
        InferenceAsset::Model(model) => {
            if (model.decay_time_s - agent_cfg.decay_time_s as f64).abs() > 1e-9 {
                return Err(Error::Argument(format!(
                    "model was fitted at decay time {} s, agent measures {} s",
                    model.decay_time_s, agent_cfg.decay_time_s
                )));
            }
            // A different region size is fine only when a p calibration can
            // absorb the count scaling.
            if model.region_size_bits != array.size_bits() && collector_cfg.calibration.is_none() {
                return Err(Error::Argument(format!(
                    "model was fitted on a {}-bit region but the agent reads {} bits; \
                     configure a known-temperature calibration so p can absorb the scaling",
                    model.region_size_bits,
                    array.size_bits()
                )));
            }
        }
        InferenceAsset::Indicators(ind) => {
            if ind.region_size_bits != array.size_bits() {
                return Err(Error::Argument(
                    "indicator set was built for a different region size".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Run a full attack: agent measures the scenario, collector decodes, and
/// the collector output is joined with ground truth into a trace.
pub fn run_scenario(
    array: &CellArray,
    scenario: &Scenario,
    agent_cfg: &SpyAgentConfig,
    collector_cfg: &CollectorConfig,
    transport: Transport,
) -> Result<RunOutcome> {
    check_asset_compatibility(array, agent_cfg, collector_cfg)?;
    let mut collector = Collector::new(collector_cfg.clone())?;

    let agent_run = match transport {
        Transport::Loopback => {
            let mut sink = VecSink::default();
            let run = run_agent(array, scenario, agent_cfg, &mut sink)?;
            for line in &sink.0 {
                collector.ingest_line(line)?;
            }
            run
        }
        Transport::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let reader = std::thread::spawn(move || -> Result<Vec<String>> {
                let (stream, _) = listener.accept()?;
                let mut lines = Vec::new();
                for line in BufReader::new(stream).lines() {
                    lines.push(line?);
                }
                Ok(lines)
            });
            let mut sink = TcpSink::connect(&addr.to_string(), 10)?;
            let run = run_agent(array, scenario, agent_cfg, &mut sink)?;
            drop(sink); // EOF for the reader
            let lines = reader
                .join()
                .map_err(|_| Error::Argument("collector thread panicked".into()))??;
            for line in &lines {
                collector.ingest_line(line)?;
            }
            run
        }
    };
    collector.finish();

    let trace = TemperatureTrace::join(&agent_run.truth, &collector.rows);
    let warnings = collector.rows.iter().filter(|r| r.warning).count() as u64;
    Ok(RunOutcome {
        trace,
        messages_sent: agent_run.messages_sent,
        refusals: agent_run.refusals,
        gap_count: collector.gap_count,
        collector_warnings: warnings,
        cycle_period_s: agent_run.cycle_period_s,
        p_used: collector.p_used(),
        simulated_seconds: agent_run.cycles as f64 * agent_run.cycle_period_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enroll::{enroll_real, temp_grid, EnrollOptions};
    use crate::infer::{fit_approx_model, grid_segment_bounds, select_indicator_cells};
    use crate::params::SimParams;

    fn noiseless() -> SimParams {
        SimParams {
            noise_sigma: 0.0,
            time_jitter_s: 0.0,
            ..SimParams::default()
        }
    }

    fn fitted_model(array: &CellArray, temps: &[f64], t: f64) -> ApproxModel {
        let seeds = SeedStream::new(5).seeds("enroll", temps.len());
        let table = enroll_real(array, "enr", temps, t, &seeds, &EnrollOptions::default()).unwrap();
        fit_approx_model(&table, &grid_segment_bounds(&table)).unwrap()
    }

    #[test]
    fn constant_scenario_is_a_fixed_point_of_inference() {
        // 256 KiBit region, noiseless: the inferred temperature equals the
        // enrolled value at 25 °C on every row.
        let array = CellArray::build(2, 262_144, noiseless()).unwrap();
        let temps = temp_grid(20.0, 45.0, 5.0);
        let model = fitted_model(&array, &temps, 120.0);
        let scenario = Scenario::constant(25.0, 2000.0);
        let agent = SpyAgentConfig::new("dev", 120, AgentMode::CountOnly, 33);
        let collector = CollectorConfig {
            inference: InferenceAsset::Model(model),
            calibration: None,
        };
        let out = run_scenario(&array, &scenario, &agent, &collector, Transport::Loopback).unwrap();
        assert!(!out.trace.rows.is_empty());
        for row in &out.trace.rows {
            assert!(
                (row.inferred_c - 25.0).abs() < 1e-6,
                "inferred {} at fixed 25 °C",
                row.inferred_c
            );
            assert_eq!(row.abs_error_c, (row.device_true_c - row.inferred_c).abs());
        }
    }

    #[test]
    fn cadence_matches_decay_plus_io() {
        // 256 KiBit at t = 120 s: io overhead 8 s, one row every 128 s.
        let array = CellArray::build(2, 262_144, noiseless()).unwrap();
        let temps = temp_grid(20.0, 45.0, 5.0);
        let model = fitted_model(&array, &temps, 120.0);
        let scenario = crate::scenario::builtin_scenario("server-workload").unwrap();
        let agent = SpyAgentConfig::new("dev", 120, AgentMode::CountOnly, 33);
        assert_eq!(agent.io_overhead_s(array.size_bits()), 8.0);
        let collector = CollectorConfig {
            inference: InferenceAsset::Model(model),
            calibration: None,
        };
        let out = run_scenario(&array, &scenario, &agent, &collector, Transport::Loopback).unwrap();
        assert_eq!(out.cycle_period_s, 128.0);
        for w in out.trace.rows.windows(2) {
            assert_eq!(w[1].timestamp_s - w[0].timestamp_s, 128);
        }
        // 7200 s scenario at 128 s cadence.
        assert_eq!(out.trace.rows.len(), 56);
    }

    #[test]
    fn room_daynight_at_five_minute_cadence_gives_288_rows() {
        let array = CellArray::build(2, 262_144, noiseless()).unwrap();
        let temps = temp_grid(18.0, 30.0, 3.0);
        let model = fitted_model(&array, &temps, 292.0);
        let scenario = crate::scenario::builtin_scenario("room-daynight").unwrap();
        let agent = SpyAgentConfig::new("dev", 292, AgentMode::CountOnly, 12);
        let collector = CollectorConfig {
            inference: InferenceAsset::Model(model),
            calibration: None,
        };
        let out = run_scenario(&array, &scenario, &agent, &collector, Transport::Loopback).unwrap();
        assert_eq!(out.cycle_period_s, 300.0);
        assert_eq!(out.trace.rows.len(), 288);
    }

    #[test]
    fn indicator_mode_decodes_over_the_wire() {
        let array = CellArray::build(3, 1 << 21, noiseless()).unwrap();
        let temps = temp_grid(22.0, 30.0, 1.0);
        let seeds = SeedStream::new(6).seeds("enroll", temps.len());
        let table =
            enroll_real(&array, "enr", &temps, 120.0, &seeds, &EnrollOptions::default()).unwrap();
        let ind = select_indicator_cells(&table, 3).unwrap();
        let scenario = Scenario::constant(26.0, 1000.0);
        let agent = SpyAgentConfig::new("dev", 120, AgentMode::Indicator(ind.clone()), 9);
        let collector = CollectorConfig {
            inference: InferenceAsset::Indicators(ind),
            calibration: None,
        };
        let out = run_scenario(&array, &scenario, &agent, &collector, Transport::Loopback).unwrap();
        assert!(!out.trace.rows.is_empty());
        // Messages per cycle = one per temperature step.
        assert_eq!(
            out.messages_sent,
            out.trace.rows.len() as u64 * (temps.len() as u64 - 1)
        );
        for row in &out.trace.rows {
            assert_eq!(row.inferred_c, 26.0);
        }
    }

    #[test]
    fn room_attack_with_21_indicator_cells_tracks_the_ambient() {
        // Day/night room trace decoded purely from indicator cells, the
        // high-robustness configuration (l = 21 on a sub-degree grid).
        let array = CellArray::build(0x4007, 1 << 24, SimParams::default()).unwrap();
        let temps = temp_grid(20.0, 28.0, 0.5);
        let seeds = SeedStream::new(0x4008).derive("enroll").seeds("m", temps.len());
        let table =
            enroll_real(&array, "room", &temps, 60.0, &seeds, &EnrollOptions::default())
                .unwrap();
        let ind = select_indicator_cells(&table, 21).unwrap();
        let scenario = crate::scenario::builtin_scenario("room-daynight").unwrap();
        let agent = SpyAgentConfig::new("room", 60, AgentMode::Indicator(ind.clone()), 0x4009);
        let collector = CollectorConfig {
            inference: InferenceAsset::Indicators(ind),
            calibration: None,
        };
        let out = run_scenario(&array, &scenario, &agent, &collector, Transport::Loopback).unwrap();
        assert!(out.trace.rows.len() > 100);
        let summary = evaluate_trace(&out.trace).unwrap();
        assert!(
            summary.p95_abs_error_c <= 0.5,
            "p95 error {} °C over the room day",
            summary.p95_abs_error_c
        );
    }

    #[test]
    fn socket_and_loopback_traces_are_identical() {
        let array = CellArray::build(4, 262_144, SimParams::default()).unwrap();
        let temps = temp_grid(20.0, 45.0, 5.0);
        let model = fitted_model(&array, &temps, 120.0);
        let scenario = crate::scenario::builtin_scenario("server-workload").unwrap();
        let agent = SpyAgentConfig::new("dev", 120, AgentMode::CountOnly, 77);
        let collector = CollectorConfig {
            inference: InferenceAsset::Model(model),
            calibration: None,
        };
        let a = run_scenario(&array, &scenario, &agent, &collector, Transport::Loopback).unwrap();
        let b = run_scenario(&array, &scenario, &agent, &collector, Transport::Tcp).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    }

    #[test]
    fn collector_tolerates_gaps() {
        let array = CellArray::build(5, 262_144, noiseless()).unwrap();
        let temps = temp_grid(20.0, 45.0, 5.0);
        let model = fitted_model(&array, &temps, 120.0);
        let scenario = Scenario::constant(30.0, 1500.0);
        let agent = SpyAgentConfig::new("dev", 120, AgentMode::CountOnly, 1);
        let mut sink = VecSink::default();
        let run = run_agent(&array, &scenario, &agent, &mut sink).unwrap();
        assert!(run.messages_sent >= 3);
        let mut collector = Collector::new(CollectorConfig {
            inference: InferenceAsset::Model(model),
            calibration: None,
        })
        .unwrap();
        sink.0.remove(1); // lose one message in transit
        for line in &sink.0 {
            collector.ingest_line(line).unwrap();
        }
        collector.finish();
        assert_eq!(collector.gap_count, 1);
        assert_eq!(collector.rows.len(), run.messages_sent as usize - 1);
        assert!(collector.log.iter().any(|l| l.contains("gap")));
    }

    #[test]
    fn refresh_lockdown_yields_zero_messages() {
        let array = CellArray::build(6, 262_144, noiseless()).unwrap();
        let temps = temp_grid(20.0, 45.0, 5.0);
        let model = fitted_model(&array, &temps, 120.0);
        let scenario = Scenario::constant(30.0, 1500.0);
        let mut agent = SpyAgentConfig::new("dev", 120, AgentMode::CountOnly, 1);
        agent.policy.refresh_locked = true;
        let collector = CollectorConfig {
            inference: InferenceAsset::Model(model),
            calibration: None,
        };
        let out = run_scenario(&array, &scenario, &agent, &collector, Transport::Loopback).unwrap();
        assert_eq!(out.messages_sent, 0);
        assert_eq!(out.refusals, 1);
        assert!(out.trace.rows.is_empty());
    }

    #[test]
    fn agent_connect_retries_until_the_collector_is_up() {
        // The listener comes up late; the backoff loop must absorb it.
        let port = {
            let probe = TcpListener::bind("127.0.0.1:0").unwrap();
            probe.local_addr().unwrap().port()
        };
        let addr = format!("127.0.0.1:{port}");
        let addr2 = addr.clone();
        let listener = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(200));
            let l = TcpListener::bind(addr2.as_str()).unwrap();
            let (stream, _) = l.accept().unwrap();
            let mut lines = Vec::new();
            for line in BufReader::new(stream).lines() {
                lines.push(line.unwrap());
            }
            lines
        });
        let mut sink = TcpSink::connect(&addr, 10).unwrap();
        sink.send_line("V1 1 128 dev r0 120000 42").unwrap();
        drop(sink);
        let lines = listener.join().unwrap();
        assert_eq!(lines, vec!["V1 1 128 dev r0 120000 42".to_string()]);
    }

    #[test]
    fn trace_csv_round_trips() {
        let trace = TemperatureTrace {
            rows: vec![TraceRow {
                timestamp_s: 128,
                ambient_true_c: 25.0,
                device_true_c: 25.1,
                inferred_c: 25.2,
                abs_error_c: 0.1,
            }],
        };
        let csv = trace.to_csv();
        assert!(csv.starts_with(TRACE_CSV_HEADER));
        let back = TemperatureTrace::from_csv(&csv).unwrap();
        assert_eq!(back.rows.len(), 1);
        assert_eq!(back.rows[0].timestamp_s, 128);
        // Comment lines are tolerated ahead of the header.
        let with_meta = format!("# tool meta line\n{csv}");
        assert!(TemperatureTrace::from_csv(&with_meta).is_ok());
    }

    #[test]
    fn evaluate_trace_statistics_and_lag() {
        assert!(evaluate_trace(&TemperatureTrace::default()).is_err());
        // Perfect inference: zero errors everywhere.
        let rows: Vec<TraceRow> = (0..20)
            .map(|i| {
                let t = 20.0 + (i as f64 * 0.7).sin() * 5.0;
                TraceRow {
                    timestamp_s: (i as u64 + 1) * 128,
                    ambient_true_c: t,
                    device_true_c: t,
                    inferred_c: t,
                    abs_error_c: 0.0,
                }
            })
            .collect();
        let s = evaluate_trace(&TemperatureTrace { rows: rows.clone() }).unwrap();
        assert_eq!(s.max_abs_error_c, 0.0);
        assert_eq!(s.mean_abs_error_c, 0.0);
        assert_eq!(s.p95_abs_error_c, 0.0);
        assert_eq!(s.lag_vs_ambient_s, Some(0.0));
        // Inference shifted by two rows: the lag estimator sees it.
        let shifted: Vec<TraceRow> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let src = i.saturating_sub(2);
                TraceRow {
                    inferred_c: rows[src].ambient_true_c,
                    abs_error_c: (r.device_true_c - rows[src].ambient_true_c).abs(),
                    ..*r
                }
            })
            .collect();
        let s = evaluate_trace(&TemperatureTrace { rows: shifted }).unwrap();
        assert_eq!(s.lag_vs_ambient_s, Some(256.0));
    }

    #[test]
    fn lag_reflects_the_thermal_time_constant() {
        // Step scenario with tau = 180 s: the inferred series lags ambient
        // by something in [0.5τ, 3τ].
        let array = CellArray::build(8, 262_144, noiseless()).unwrap();
        let temps = temp_grid(20.0, 45.0, 5.0);
        let model = fitted_model(&array, &temps, 120.0);
        let scenario = crate::scenario::builtin_scenario("server-workload").unwrap();
        let tau = scenario.device_lag_tau_s;
        let agent = SpyAgentConfig::new("dev", 120, AgentMode::CountOnly, 21);
        let collector = CollectorConfig {
            inference: InferenceAsset::Model(model),
            calibration: None,
        };
        let out = run_scenario(&array, &scenario, &agent, &collector, Transport::Loopback).unwrap();
        let lag = evaluate_trace(&out.trace).unwrap().lag_vs_ambient_s.unwrap();
        assert!(
            lag >= 0.5 * tau && lag <= 3.0 * tau,
            "lag {lag} s outside [0.5τ, 3τ] for τ = {tau}"
        );
    }
}
