//! CLI behavior: exit codes, artifact provenance, the split
//! agent/collector flow over a real socket, and bitmap decode plumbing.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_decaytherm"))
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");

    // Missing region size: config error -> 2.
    let cfg = write_cfg(dir.path(), "a.kv", "master_seed = 1\ntemps = 25:30:1\ndecay_time_s = 60\n");
    let status = bin()
        .args(["enroll", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("region_size"));

    // Unknown config key also names itself -> 2.
    let cfg = write_cfg(dir.path(), "b.kv", "regoin_size = 1MiB\n");
    let status = bin()
        .args(["enroll", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("regoin_size"));

    // Insufficient candidates -> 3.
    let cfg = write_cfg(
        dir.path(),
        "c.kv",
        "master_seed = 4\nregion_size = 512KiB\ntemps = 0:10:2.5\ndecay_time_s = 60\n",
    );
    let table = dir.path().join("table.json");
    assert!(bin()
        .args(["enroll", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&table)
        .status()
        .unwrap()
        .success());
    let status = bin()
        .args(["fit", "--kind", "indicators", "--l", "21", "--table"])
        .arg(&table)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&status.stderr).contains("larger DRAM region"));

    // Defense refusal -> 4.
    let cfg = write_cfg(
        dir.path(),
        "d.kv",
        "master_seed = 1\nregion_size = 256KiBit\ntemps = 20:45:5\ndecay_time_s = 120\nrefresh_locked = true\n",
    );
    let status = bin()
        .args(["scenario", "run", "--name", "server-workload", "--seed", "1"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("t.csv"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));
}

#[test]
fn artifacts_embed_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "exp.kv",
        "master_seed = 31\nregion_size = 256KiB\ntemps = 25:35:2.5\ndecay_time_s = 120\n",
    );
    let table = dir.path().join("table.json");
    let csv = dir.path().join("table.csv");
    assert!(bin()
        .args(["enroll", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&table)
        .arg("--csv")
        .arg(&csv)
        .status()
        .unwrap()
        .success());

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&table).unwrap()).unwrap();
    assert_eq!(doc["schema"], "decaytherm/enrollment-table");
    assert_eq!(doc["meta"]["master_seed"], 31);
    assert_eq!(doc["meta"]["tool"], "decaytherm");
    assert!(doc["meta"]["config_digest"].as_str().unwrap().len() == 16);

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap();
    assert!(comment.starts_with("# decaytherm"));
    assert!(comment.contains("master_seed=31"));
    assert_eq!(lines.next().unwrap(), "nominal_temp_c,decay_time_s,flip_count");
}

#[test]
fn bitmap_round_trips_through_decode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "exp.kv",
        "master_seed = 5\nregion_size = 256KiB\ntemps = 25:35:1\ndecay_time_s = 120\n",
    );
    let table = dir.path().join("table.json");
    let ind = dir.path().join("ind.json");
    let bitmap = dir.path().join("probe.bin");
    assert!(bin()
        .args(["enroll", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&table)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["fit", "--kind", "indicators", "--l", "3", "--table"])
        .arg(&table)
        .arg("--out")
        .arg(&ind)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--temp", "31", "--time", "120", "--out-bitmap"])
        .arg(&bitmap)
        .status()
        .unwrap()
        .success());
    assert!(bitmap.with_extension("bin.meta.json").exists());
    let out = bin()
        .args(["decode", "--indicators"])
        .arg(&ind)
        .arg("--bitmap")
        .arg(&bitmap)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let row = stdout.lines().nth(1).unwrap();
    let temp: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((temp - 31.0).abs() < 0.51, "decoded {temp} from a 31 °C probe");
}

#[test]
fn split_agent_collector_over_tcp_matches_orchestrated_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_body = "master_seed = 9\nregion_size = 256KiB\ntemps = 20:45:5\ndecay_time_s = 120\n\
                    scenario = server-workload\nagent_decay_time_s = 120\nmax_cycles = 8\n";
    let cfg = write_cfg(dir.path(), "exp.kv", cfg_body);
    let table = dir.path().join("table.json");
    let model = dir.path().join("model.json");
    assert!(bin()
        .args(["enroll", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&table)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["fit", "--table"])
        .arg(&table)
        .arg("--out")
        .arg(&model)
        .status()
        .unwrap()
        .success());

    // Orchestrated run (loopback inside the service).
    let orchestrated = dir.path().join("orchestrated.csv");
    assert!(bin()
        .args(["attack", "--config"])
        .arg(&cfg)
        .arg("--model")
        .arg(&model)
        .arg("--out")
        .arg(&orchestrated)
        .status()
        .unwrap()
        .success());

    // Split processes over a real socket.
    let port = 39000 + (std::process::id() % 20000) as u16;
    let split = dir.path().join("split.csv");
    let truth = dir.path().join("truth.csv");
    let mut collector = bin()
        .args(["collector", "--model"])
        .arg(&model)
        .args(["--listen", &port.to_string(), "--out"])
        .arg(&split)
        .arg("--truth")
        .arg(&truth)
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(300));
    let agent = bin()
        .args(["agent", "--config"])
        .arg(&cfg)
        .args(["--connect", &format!("127.0.0.1:{port}")])
        .arg("--truth-out")
        .arg(&truth)
        .status()
        .unwrap();
    assert!(agent.success());
    assert!(collector.wait().unwrap().success());

    // Same measurements, same decoding: the data rows must agree (the
    // provenance comments differ, the collector inherits the model's).
    let rows = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    };
    assert_eq!(rows(&orchestrated), rows(&split));
}
