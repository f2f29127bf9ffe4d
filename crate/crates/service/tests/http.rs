//! End-to-end checks of the HTTP surface through the real client over a
//! real socket.

use decaytherm_api::*;
use decaytherm_client::{ClientError, ServiceClient};
use decaytherm_core::config::RunConfig;
use decaytherm_service::LocalService;

fn test_config() -> RunConfig {
    RunConfig::from_kv_text(
        "master_seed = 11\nregion_size = 256KiB\ntemps = 25:35:1\ndecay_time_s = 120\n",
    )
    .unwrap()
}

#[test]
fn full_pipeline_over_http() {
    let service = LocalService::spawn().unwrap();
    let client = ServiceClient::new(&service.base_url);

    let v = client.version().unwrap();
    assert_eq!(v.name, "decaytherm-service");

    let scenarios = client.scenarios().unwrap();
    assert!(scenarios.builtin.contains(&"server-workload".to_string()));

    // Enroll twice: deterministic, byte-identical tables.
    let req = EnrollRequest {
        config: test_config(),
    };
    let a = client.enroll(&req).unwrap();
    let b = client.enroll(&req).unwrap();
    assert_eq!(
        serde_json::to_string(&a.table).unwrap(),
        serde_json::to_string(&b.table).unwrap()
    );
    assert_eq!(a.table.records.len(), 11);
    assert!(a.simulated_seconds > 0.0);

    // Fit a model on the enrolled table and decode a count.
    let fit = client
        .fit_model(&FitModelRequest {
            table: a.table.clone(),
            segment_bounds: None,
            k: Some(0.07),
        })
        .unwrap();
    let mid = &a.table.records[5];
    let decoded = client
        .decode(&DecodeRequest {
            model: Some(fit.model.clone()),
            indicators: None,
            p: None,
            counts: Some(vec![TimedCount {
                timestamp_s: 128,
                flip_count: mid.flip_count,
            }]),
            average: false,
            bitmap: None,
        })
        .unwrap();
    assert_eq!(decoded.rows.len(), 1);
    assert!(
        (decoded.rows[0].temp_c - mid.nominal_temp_c).abs() < 0.5,
        "decoded {} vs {}",
        decoded.rows[0].temp_c,
        mid.nominal_temp_c
    );

    // Averaged-count decoding pools the readings into one row.
    let avg = client
        .decode(&DecodeRequest {
            model: Some(fit.model.clone()),
            indicators: None,
            p: None,
            counts: Some(vec![
                TimedCount { timestamp_s: 128, flip_count: mid.flip_count - 5 },
                TimedCount { timestamp_s: 256, flip_count: mid.flip_count + 5 },
            ]),
            average: true,
            bitmap: None,
        })
        .unwrap();
    assert_eq!(avg.rows.len(), 1);
    assert!((avg.rows[0].temp_c - mid.nominal_temp_c).abs() < 0.5);

    // Indicator selection over HTTP.
    let ind = client
        .fit_indicators(&FitIndicatorsRequest {
            table: a.table.clone(),
            l: 3,
        })
        .unwrap();
    assert_eq!(ind.indicators.steps.len(), 10);

    // Scenario run (self-fitting, small region keeps it quick).
    let mut cfg = test_config();
    cfg.scenario = Some("server-workload".to_string());
    cfg.max_cycles = Some(10);
    let run = client
        .scenario_run(&ScenarioRunRequest {
            config: cfg,
            model: Some(fit.model),
            indicators: None,
            scenario: None,
        })
        .unwrap();
    assert_eq!(run.trace.rows.len(), 10);
    assert!(run.summary.is_some());
}

#[test]
fn constant_temperature_enrollment_over_http() {
    let service = LocalService::spawn().unwrap();
    let client = ServiceClient::new(&service.base_url);
    let cfg = RunConfig::from_kv_text(
        "master_seed = 13
region_size = 256KiB
enroll_mode = constant-temp
         temps = 20:40:2
at_temp_c = 25
base_decay_time_s = 60
k = 0.07
",
    )
    .unwrap();
    let resp = client.enroll(&EnrollRequest { config: cfg }).unwrap();
    assert_eq!(resp.table.records.len(), 11);
    match resp.table.mode {
        decaytherm_core::enroll::EnrollmentMode::SimulatedByDecayTime { k_used, at_temp_c } => {
            assert_eq!(k_used, 0.07);
            assert_eq!(at_temp_c, 25.0);
        }
        other => panic!("expected simulated mode, got {other:?}"),
    }
    // Decay times follow t0 · e^(k·ΔT): the 40 °C target runs the longest.
    let last = resp.table.records.last().unwrap();
    assert!((last.decay_time_s - 60.0 * (0.07f64 * 15.0).exp()).abs() < 1e-9);
}

#[test]
fn service_errors_carry_typed_kinds() {
    let service = LocalService::spawn().unwrap();
    let client = ServiceClient::new(&service.base_url);

    // Missing region size: a config error, exit code 2.
    let mut cfg = test_config();
    cfg.region_size_bits = None;
    let err = client.enroll(&EnrollRequest { config: cfg }).unwrap_err();
    match err {
        ClientError::Api(api) => {
            assert_eq!(api.kind, "config");
            assert!(api.message.contains("region_size"));
            assert_eq!(api.exit_code(), 2);
        }
        other => panic!("expected api error, got {other:?}"),
    }

    // Too few candidates: insufficient-candidates, exit code 3.
    let cfg = RunConfig::from_kv_text(
        "master_seed = 3\nregion_size = 64KiBit\ntemps = 0:2.5:2.5\ndecay_time_s = 60\n",
    )
    .unwrap();
    let table = client.enroll(&EnrollRequest { config: cfg }).unwrap().table;
    let err = client
        .fit_indicators(&FitIndicatorsRequest { table, l: 21 })
        .unwrap_err();
    match err {
        ClientError::Api(api) => {
            assert_eq!(api.kind, "insufficient-candidates");
            assert_eq!(api.exit_code(), 3);
        }
        other => panic!("expected api error, got {other:?}"),
    }
}
