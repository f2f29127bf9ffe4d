//! decaytherm: command-line front end. Compute subcommands are clients of
//! the HTTP service (an in-process instance is spawned when no `--server`
//! is given); `agent` and `collector` speak the raw line protocol directly.

mod artifacts;

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use decaytherm_api::*;
use decaytherm_client::{ClientError, ServiceClient};
use decaytherm_core::artifact::{
    ArtifactMeta, SCHEMA_APPROX_MODEL, SCHEMA_DEFENSE_REPORT, SCHEMA_ENROLLMENT,
    SCHEMA_INDICATORS, SCHEMA_SWEEP,
};
use decaytherm_core::config::{parse_temp_list, RunConfig};
use decaytherm_core::error::Error as CoreError;
use decaytherm_core::harness::{
    run_agent, AgentMode, CalibrationConfig, Collector, CollectorConfig, InferenceAsset,
    SpyAgentConfig, TcpSink, TemperatureTrace, TraceRow,
};
use decaytherm_core::scenario::Scenario;
use decaytherm_core::units::parse_region_size;
use decaytherm_service::LocalService;

use artifacts::CLI_VERSION;

#[derive(Parser)]
#[command(name = "decaytherm", version, about = "DRAM-decay temperature side-channel lab")]
struct Cli {
    /// Base URL of a running service; otherwise one is spawned in-process.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Key-value experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Region size override (e.g. 2MiB, 512KiB, 256KiBit).
    #[arg(long)]
    region_size: Option<String>,
    /// Temperature grid override (`lo:hi:step` or comma list).
    #[arg(long)]
    temps: Option<String>,
    /// Enrollment decay time override, seconds.
    #[arg(long)]
    decay_time: Option<f64>,
    /// Measurements per temperature.
    #[arg(long)]
    reps: Option<usize>,
    /// Device identifier override.
    #[arg(long)]
    device_id: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                RunConfig::from_kv_text(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(size) = &self.region_size {
            cfg.region_size_bits = Some(parse_region_size(size)?);
        }
        if let Some(temps) = &self.temps {
            cfg.temps = Some(parse_temp_list("temps", temps)?);
        }
        if let Some(t) = self.decay_time {
            cfg.decay_time_s = Some(t);
        }
        if let Some(reps) = self.reps {
            cfg.reps = reps;
        }
        if let Some(dev) = &self.device_id {
            cfg.device_id = dev.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        listen: std::net::SocketAddr,
    },
    /// One decay measurement: initialize, decay, read back.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        temp: f64,
        /// Decay time in seconds.
        #[arg(long)]
        time: f64,
        /// Measurement seed (defaults to a master-seed sub-stream).
        #[arg(long)]
        measurement_seed: Option<u64>,
        /// Write the flipped-cell bitmap (binary + .meta.json sidecar).
        #[arg(long)]
        out_bitmap: Option<PathBuf>,
        /// Write the flipped indices as CSV.
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Take enrollment measurements and write the table artifact.
    Enroll {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also export (T, t, flip_count) rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Decay-time sweep at one temperature (input for estimate-k).
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        at_temp: f64,
        /// Comma list of decay times in seconds.
        #[arg(long)]
        times: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the temperature index k from sweep/table pairings.
    EstimateK {
        /// Repeatable `sweep.json,table.json` pairing.
        #[arg(long = "pair", required = true)]
        pairs: Vec<String>,
    },
    /// Fit an inference asset from an enrollment table.
    Fit {
        /// Enrollment table artifact.
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `model` (approximation function) or `indicators`.
        #[arg(long, default_value = "model")]
        kind: String,
        /// Segment bounds for the model fit (`grid` or a comma list).
        #[arg(long)]
        segments: Option<String>,
        /// Indicator cells per temperature step (odd).
        #[arg(long, default_value_t = 3)]
        l: usize,
        /// Temperature index to stamp on the model.
        #[arg(long)]
        k: Option<f64>,
    },
    /// Map counts or a bitmap to temperatures.
    Decode {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        indicators: Option<PathBuf>,
        /// Counts CSV (`timestamp_s,flip_count` rows).
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Binary bitmap (with its .meta.json sidecar).
        #[arg(long)]
        bitmap: Option<PathBuf>,
        /// Extrapolation factor override.
        #[arg(long)]
        p: Option<f64>,
        /// Average the counts and decode once.
        #[arg(long)]
        average: bool,
        /// Write rows here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a spy attack over a scenario with explicit assets.
    Attack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        indicators: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        scenario_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `loopback` or `tcp`.
        #[arg(long)]
        transport: Option<String>,
    },
    /// Built-in scenario tooling.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Evaluate countermeasures: bare vs covered attack accuracy.
    Defend {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a trace CSV (max/mean/p95 error, lag).
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Spy agent: measure the simulated device, stream to a collector.
    Agent {
        #[arg(long)]
        config: PathBuf,
        /// Collector address HOST:PORT.
        #[arg(long)]
        connect: String,
        /// Write simulation ground truth for later joining.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Collector: listen for one agent and decode its stream.
    Collector {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        indicators: Option<PathBuf>,
        #[arg(long)]
        listen: u16,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth CSV from `agent --truth-out` to fill truth columns.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Known temperature of the first measurement (cross-device p).
        #[arg(long)]
        known_temp: Option<f64>,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Self-contained reproduction: enroll, fit, replay, write the trace.
    Run {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Key-value experiment config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Region size override.
        #[arg(long)]
        region_size: Option<String>,
    },
    /// List built-in scenarios.
    List,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code_for(&err));
        }
    }
}

/// Exit-code contract: 0 success, 2 config error, 3 insufficient data,
/// 4 defense refusal.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    if let Some(client) = err.downcast_ref::<ClientError>() {
        return client.exit_code();
    }
    if let Some(core) = err.downcast_ref::<CoreError>() {
        return core.exit_code();
    }
    1
}

struct Service {
    client: ServiceClient,
    _local: Option<LocalService>,
}

fn service_for(server: &Option<String>) -> Result<Service> {
    match server {
        Some(url) => Ok(Service {
            client: ServiceClient::new(url),
            _local: None,
        }),
        None => {
            let local = LocalService::spawn().context("spawning in-process service")?;
            let client = ServiceClient::new(&local.base_url);
            Ok(Service {
                client,
                _local: Some(local),
            })
        }
    }
}

fn meta_for(cfg: &RunConfig) -> ArtifactMeta {
    ArtifactMeta::new(CLI_VERSION, cfg.master_seed, &cfg.digest())
}

fn load_scenario_file(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    Ok(Scenario::from_kv(&text)?)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Serve { listen } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(decaytherm_service::serve(listen))?;
            Ok(0)
        }

        Cmd::Simulate {
            cfg,
            temp,
            time,
            measurement_seed,
            out_bitmap,
            out_csv,
        } => {
            let config = cfg.load()?;
            let svc = service_for(&cli.server)?;
            let started = Instant::now();
            let resp = svc.client.simulate(&SimulateRequest {
                config: config.clone(),
                temp_c: temp,
                decay_time_s: time,
                measurement_seed,
                include_bitmap: out_bitmap.is_some() || out_csv.is_some(),
            })?;
            let meta = meta_for(&config);
            if let Some(path) = &out_bitmap {
                let bm = resp
                    .bitmap
                    .as_ref()
                    .ok_or_else(|| anyhow!("service omitted the bitmap"))?;
                artifacts::write_bitmap(path, &meta, bm)?;
            }
            if let Some(path) = &out_csv {
                let bm = resp
                    .bitmap
                    .as_ref()
                    .ok_or_else(|| anyhow!("service omitted the bitmap"))?;
                artifacts::write_csv(path, &meta, &bm.to_csv())?;
            }
            println!(
                "flips={} region_bits={} fraction={:.3e} seed={}",
                resp.flip_count, resp.region_size_bits, resp.fraction_flipped, resp.measurement_seed
            );
            eprintln!(
                "simulated {}s decay at {temp} °C in {:.2}s wall time",
                time,
                started.elapsed().as_secs_f64()
            );
            Ok(0)
        }

        Cmd::Enroll { cfg, out, csv } => {
            let config = cfg.load()?;
            let svc = service_for(&cli.server)?;
            let started = Instant::now();
            let resp = svc.client.enroll(&EnrollRequest {
                config: config.clone(),
            })?;
            let meta = meta_for(&config);
            artifacts::write_doc(&out, SCHEMA_ENROLLMENT, &meta, &resp.table)?;
            if let Some(path) = &csv {
                artifacts::write_csv(path, &meta, &resp.table.to_csv())?;
            }
            println!(
                "enrolled {} records -> {}",
                resp.table.records.len(),
                out.display()
            );
            eprintln!(
                "simulated hardware time {:.0}s; wall time {:.2}s",
                resp.simulated_seconds,
                started.elapsed().as_secs_f64()
            );
            Ok(0)
        }

        Cmd::Sweep {
            cfg,
            at_temp,
            times,
            out,
        } => {
            let config = cfg.load()?;
            let svc = service_for(&cli.server)?;
            let decay_times = parse_temp_list("times", &times)?;
            let resp = svc.client.sweep(&SweepRequest {
                config: config.clone(),
                at_temp_c: at_temp,
                decay_times_s: decay_times,
            })?;
            artifacts::write_doc(&out, SCHEMA_SWEEP, &meta_for(&config), &resp.sweep)?;
            println!(
                "swept {} decay times at {at_temp} °C -> {}",
                resp.sweep.records.len(),
                out.display()
            );
            Ok(0)
        }

        Cmd::EstimateK { pairs } => {
            let svc = service_for(&cli.server)?;
            let mut pairings = Vec::new();
            for pairing in &pairs {
                let (sweep_path, table_path) = pairing
                    .split_once(',')
                    .ok_or_else(|| anyhow!("--pair needs `sweep.json,table.json`"))?;
                let sweep = artifacts::load_sweep(Path::new(sweep_path))?.payload;
                let table = artifacts::load_table(Path::new(table_path))?.payload;
                pairings.push((sweep, table));
            }
            let resp = svc.client.estimate_k(&EstimateKRequest { pairings })?;
            println!("k = {:.6} ({} matched pairs)", resp.k, resp.matched_pairs);
            Ok(0)
        }

        Cmd::Fit {
            table,
            out,
            kind,
            segments,
            l,
            k,
        } => {
            let svc = service_for(&cli.server)?;
            let doc = artifacts::load_table(&table)?;
            match kind.as_str() {
                "model" => {
                    let segment_bounds = match segments.as_deref() {
                        None | Some("grid") => None,
                        Some(list) => Some(parse_temp_list("segments", list)?),
                    };
                    let resp = svc.client.fit_model(&FitModelRequest {
                        table: doc.payload,
                        segment_bounds,
                        k,
                    })?;
                    artifacts::write_doc(&out, SCHEMA_APPROX_MODEL, &doc.meta, &resp.model)?;
                    println!(
                        "fitted {} segments (monotone: {}) -> {}",
                        resp.model.segments.len(),
                        resp.model.monotone,
                        out.display()
                    );
                }
                "indicators" => {
                    let resp = svc.client.fit_indicators(&FitIndicatorsRequest {
                        table: doc.payload,
                        l,
                    })?;
                    artifacts::write_doc(&out, SCHEMA_INDICATORS, &doc.meta, &resp.indicators)?;
                    println!(
                        "selected {} steps x {} indicator cells -> {}",
                        resp.indicators.steps.len(),
                        resp.indicators.l,
                        out.display()
                    );
                }
                other => bail!("--kind must be `model` or `indicators`, got `{other}`"),
            }
            Ok(0)
        }

        Cmd::Decode {
            model,
            indicators,
            counts,
            bitmap,
            p,
            average,
            out,
        } => {
            let svc = service_for(&cli.server)?;
            let mut asset_meta = None;
            let req = DecodeRequest {
                model: model
                    .as_deref()
                    .map(|p| {
                        artifacts::load_model(p).map(|d| {
                            asset_meta = Some(d.meta.clone());
                            d.payload
                        })
                    })
                    .transpose()?,
                indicators: indicators
                    .as_deref()
                    .map(|p| {
                        artifacts::load_indicators(p).map(|d| {
                            asset_meta = Some(d.meta.clone());
                            d.payload
                        })
                    })
                    .transpose()?,
                p,
                counts: counts
                    .as_deref()
                    .map(|path| -> Result<Vec<TimedCount>> {
                        Ok(artifacts::read_counts_csv(path)?
                            .into_iter()
                            .map(|(timestamp_s, flip_count)| TimedCount {
                                timestamp_s,
                                flip_count,
                            })
                            .collect())
                    })
                    .transpose()?,
                average,
                bitmap: bitmap.as_deref().map(artifacts::read_bitmap).transpose()?,
            };
            let resp = svc.client.decode(&req)?;
            let mut text = String::from("timestamp_s,flips,temp_c\n");
            for row in &resp.rows {
                text.push_str(&format!(
                    "{},{},{:.4}\n",
                    row.timestamp_s, row.flip_count, row.temp_c
                ));
                if row.warning {
                    eprintln!(
                        "warning: non-monotone vote pattern at t={}s",
                        row.timestamp_s
                    );
                }
            }
            match (out, asset_meta) {
                (Some(path), Some(meta)) => artifacts::write_csv(&path, &meta, &text)?,
                (Some(path), None) => std::fs::write(path, text)?,
                (None, _) => print!("{text}"),
            }
            Ok(0)
        }

        Cmd::Attack {
            cfg,
            model,
            indicators,
            scenario,
            scenario_file,
            out,
            transport,
        } => {
            let mut config = cfg.load()?;
            if let Some(name) = scenario {
                config.scenario = Some(name);
            }
            if let Some(t) = transport.as_deref() {
                config.transport_tcp = match t {
                    "tcp" => true,
                    "loopback" => false,
                    other => bail!("--transport must be `tcp` or `loopback`, got `{other}`"),
                };
            }
            let inline = match (&scenario_file, &config.scenario_file) {
                (Some(path), _) => Some(load_scenario_file(path)?),
                (None, Some(path)) => Some(load_scenario_file(Path::new(path))?),
                (None, None) => None,
            };
            let svc = service_for(&cli.server)?;
            let resp = svc.client.scenario_run(&ScenarioRunRequest {
                config: config.clone(),
                model: model
                    .as_deref()
                    .map(|p| artifacts::load_model(p).map(|d| d.payload))
                    .transpose()?,
                indicators: indicators
                    .as_deref()
                    .map(|p| artifacts::load_indicators(p).map(|d| d.payload))
                    .transpose()?,
                scenario: inline,
            })?;
            finish_scenario_run(&config, &resp, &out)
        }

        Cmd::Scenario { cmd } => match cmd {
            ScenarioCmd::List => {
                let svc = service_for(&cli.server)?;
                for name in svc.client.scenarios()?.builtin {
                    println!("{name}");
                }
                Ok(0)
            }
            ScenarioCmd::Run {
                name,
                seed,
                out,
                config,
                region_size,
            } => {
                let cfg = ConfigArgs {
                    config,
                    seed: None,
                    region_size,
                    temps: None,
                    decay_time: None,
                    reps: None,
                    device_id: None,
                };
                let mut config = cfg.load()?;
                config.master_seed = seed;
                config.scenario = Some(name);
                if config.region_size_bits.is_none() {
                    config.region_size_bits = Some(262_144); // 256 KiBit
                }
                let svc = service_for(&cli.server)?;
                let resp = svc.client.scenario_run(&ScenarioRunRequest {
                    config: config.clone(),
                    model: None,
                    indicators: None,
                    scenario: None,
                })?;
                finish_scenario_run(&config, &resp, &out)
            }
        },

        Cmd::Defend {
            cfg,
            model,
            scenario,
            out,
        } => {
            let mut config = cfg.load()?;
            if let Some(name) = scenario {
                config.scenario = Some(name);
            }
            let svc = service_for(&cli.server)?;
            let resp = svc.client.defense_eval(&DefenseEvalRequest {
                config: config.clone(),
                model: model
                    .as_deref()
                    .map(|p| artifacts::load_model(p).map(|d| d.payload))
                    .transpose()?,
                scenario: config
                    .scenario_file
                    .as_deref()
                    .map(|p| load_scenario_file(Path::new(p)))
                    .transpose()?,
            })?;
            let meta = meta_for(&config);
            if let Some(path) = &out {
                artifacts::write_csv(path, &meta, &resp.report.to_csv())?;
                artifacts::write_doc(
                    &path.with_extension("json"),
                    SCHEMA_DEFENSE_REPORT,
                    &meta,
                    &resp.report,
                )?;
            }
            println!("{}", resp.report.summary());
            Ok(0)
        }

        Cmd::Report { trace, json } => {
            let text = std::fs::read_to_string(&trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            let trace = TemperatureTrace::from_csv(&text)?;
            let summary = decaytherm_core::harness::evaluate_trace(&trace)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                println!(
                    "rows={} max_abs_error={:.3} mean_abs_error={:.3} p95_abs_error={:.3} lag_s={}",
                    summary.rows,
                    summary.max_abs_error_c,
                    summary.mean_abs_error_c,
                    summary.p95_abs_error_c,
                    summary
                        .lag_vs_ambient_s
                        .map(|l| format!("{l:.0}"))
                        .unwrap_or_else(|| "n/a".into())
                );
            }
            Ok(0)
        }

        Cmd::Agent {
            config,
            connect,
            truth_out,
        } => cmd_agent(&config, &connect, truth_out.as_deref()),

        Cmd::Collector {
            model,
            indicators,
            listen,
            out,
            truth,
            known_temp,
        } => cmd_collector(
            model.as_deref(),
            indicators.as_deref(),
            listen,
            &out,
            truth.as_deref(),
            known_temp,
        ),
    }
}

fn finish_scenario_run(config: &RunConfig, resp: &ScenarioRunResponse, out: &Path) -> Result<i32> {
    if resp.refusals > 0 && resp.messages_sent == 0 {
        eprintln!("attack refused by the platform defense policy; no spy messages were sent");
        return Err(CoreError::Refused("refresh disable blocked by kernel policy".into()).into());
    }
    let meta = meta_for(config);
    artifacts::write_csv(out, &meta, &resp.trace.to_csv())?;
    println!(
        "{} rows -> {} (cadence {:.0}s, {} messages, p={:.4})",
        resp.trace.rows.len(),
        out.display(),
        resp.cycle_period_s,
        resp.messages_sent,
        resp.p_used
    );
    if let Some(summary) = &resp.summary {
        println!(
            "errors: max={:.3} mean={:.3} p95={:.3} °C; lag={}",
            summary.max_abs_error_c,
            summary.mean_abs_error_c,
            summary.p95_abs_error_c,
            summary
                .lag_vs_ambient_s
                .map(|l| format!("{l:.0}s"))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    eprintln!(
        "simulated {:.0}s of attack time ({} gaps, {} vote warnings)",
        resp.simulated_seconds, resp.gap_count, resp.collector_warnings
    );
    Ok(0)
}

/// The spy-agent process: simulate the device locally and stream counts to
/// a remote collector over TCP.
fn cmd_agent(config_path: &Path, connect: &str, truth_out: Option<&Path>) -> Result<i32> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let cfg = RunConfig::from_kv_text(&text)?;
    let size = cfg.require_region_size()?;
    let seed = decaytherm_service::ops::array_seed(&cfg);
    let array = decaytherm_core::cell::CellArray::build(seed, size, cfg.params)?;

    let scenario = match (&cfg.scenario_file, &cfg.scenario) {
        (Some(path), _) => load_scenario_file(Path::new(path))?,
        (None, Some(name)) => decaytherm_core::scenario::builtin_scenario(name)?,
        (None, None) => return Err(CoreError::config("scenario", "missing").into()),
    };

    let agent_cfg = SpyAgentConfig {
        device_id: cfg.device_id.clone(),
        region_id: cfg.region_id.clone(),
        decay_time_s: cfg.agent_decay_time_s,
        io_seconds_per_256kibit: cfg.io_seconds_per_256kibit,
        mode: AgentMode::CountOnly,
        policy: cfg.policy,
        pathway: cfg.pathway,
        cover: cfg.cover_enabled.then_some(cfg.cover),
        seed: cfg.seed_stream().derive("spy").value(),
        max_cycles: cfg.max_cycles,
    };

    let mut sink = TcpSink::connect(connect, 10)?;
    let run = run_agent(&array, &scenario, &agent_cfg, &mut sink)?;
    if run.refusals > 0 && run.messages_sent == 0 {
        eprintln!("measurement refused by the platform defense policy");
        return Err(CoreError::Refused("refresh disable blocked by kernel policy".into()).into());
    }
    if let Some(path) = truth_out {
        let mut text = String::from("timestamp_s,ambient_true_c,device_true_c\n");
        for t in &run.truth {
            text.push_str(&format!(
                "{},{:.6},{:.6}\n",
                t.timestamp_s, t.ambient_true_c, t.device_true_c
            ));
        }
        artifacts::write_csv(path, &meta_for(&cfg), &text)?;
    }
    eprintln!(
        "sent {} messages over {} cycles ({:.0}s simulated)",
        run.messages_sent,
        run.cycles,
        run.cycles as f64 * run.cycle_period_s
    );
    Ok(0)
}

/// The collector process: accept one agent stream, decode it, and write the
/// trace (truth columns joined from a file, or NaN without one).
fn cmd_collector(
    model: Option<&Path>,
    indicators: Option<&Path>,
    listen: u16,
    out: &Path,
    truth: Option<&Path>,
    known_temp: Option<f64>,
) -> Result<i32> {
    let (inference, meta) = match (model, indicators) {
        (Some(path), None) => {
            let doc = artifacts::load_model(path)?;
            (InferenceAsset::Model(doc.payload), doc.meta)
        }
        (None, Some(path)) => {
            let doc = artifacts::load_indicators(path)?;
            (InferenceAsset::Indicators(doc.payload), doc.meta)
        }
        _ => bail!("provide exactly one of --model or --indicators"),
    };
    let mut collector = Collector::new(CollectorConfig {
        inference,
        calibration: known_temp.map(|known_temp_c| CalibrationConfig { known_temp_c }),
    })?;

    let listener = TcpListener::bind(("127.0.0.1", listen))
        .with_context(|| format!("binding port {listen}"))?;
    eprintln!("collector listening on {}", listener.local_addr()?);
    let (stream, peer) = listener.accept()?;
    eprintln!("agent connected from {peer}");
    for line in BufReader::new(stream).lines() {
        collector.ingest_line(&line?)?;
    }
    collector.finish();
    for entry in &collector.log {
        eprintln!("collector: {entry}");
    }

    let truth_by_ts: std::collections::BTreeMap<u64, (f64, f64)> = match truth {
        Some(path) => read_truth_csv(path)?
            .into_iter()
            .map(|(ts, amb, dev)| (ts, (amb, dev)))
            .collect(),
        None => Default::default(),
    };
    let rows: Vec<TraceRow> = collector
        .rows
        .iter()
        .map(|r| {
            let (ambient, device) = truth_by_ts
                .get(&r.timestamp_s)
                .copied()
                .unwrap_or((f64::NAN, f64::NAN));
            TraceRow {
                timestamp_s: r.timestamp_s,
                ambient_true_c: ambient,
                device_true_c: device,
                inferred_c: r.inferred_c,
                abs_error_c: (device - r.inferred_c).abs(),
            }
        })
        .collect();
    let trace = TemperatureTrace { rows };
    artifacts::write_csv(out, &meta, &trace.to_csv())?;
    println!(
        "decoded {} rows ({} gaps) -> {}",
        trace.rows.len(),
        collector.gap_count,
        out.display()
    );
    Ok(0)
}

fn read_truth_csv(path: &Path) -> Result<Vec<(u64, f64, f64)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("timestamp") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            bail!("bad truth row `{line}`");
        }
        out.push((fields[0].parse()?, fields[1].parse()?, fields[2].parse()?));
    }
    Ok(out)
}
