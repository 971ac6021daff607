//! End-to-end runs of the `srl` binary.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use tungstenite::Message;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config() -> PathBuf {
    repo().join("config/default.json")
}

fn srl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SRL_LOG_DIR")
        .output()
        .expect("run srl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn track_writes_log_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let o = srl(&["track", cfg.to_str().unwrap(), "--x", "-23.62", "--y", "650.69"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("track_summary.json")).unwrap()).unwrap();
    assert!(summary["final_cartesian_error_mm"].as_f64().unwrap() < 3.0);
    let csv = std::fs::read_to_string(dir.path().join("track.csv")).unwrap();
    assert!(csv.starts_with("t,q1_d,q2_d,q1,q2,phi1,phi2,k1,k2,tau1,tau2,r1,r2,x,y\n"));
    assert_eq!(csv.lines().count(), 6002);
}

#[test]
fn fsm_demo_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let events = repo().join("config/eating.jsonl");
    let o = srl(&["fsm-demo", cfg.to_str().unwrap(), "--events", events.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    for s in ["S1_rest", "S2_transit", "S2_rest", "S3", "S4", "S1_transit"] {
        assert!(stdout.contains(s), "{s} missing:\n{stdout}");
    }
    let trace = std::fs::read_to_string(dir.path().join("fsm_trace.csv")).unwrap();
    // 12 s script + 5 s tail at 1 kHz, plus the header.
    assert_eq!(trace.lines().count(), 17_001);
}

#[test]
fn simulate_and_stab_sweep_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let o = srl(&["simulate", cfg.to_str().unwrap(), "--duration", "2"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("session.csv")).unwrap().lines().count(), 2001);
    let o = srl(&["stab-sweep", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("stab_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 19);
}

#[test]
fn out_dir_falls_back_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let o = Command::new(env!("CARGO_BIN_EXE_srl"))
        .args(["simulate", cfg.to_str().unwrap(), "--duration", "0.1"])
        .env("SRL_LOG_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("session.csv").exists());
}

#[test]
fn default_config_prints_valid_config() {
    let o = Command::new(env!("CARGO_BIN_EXE_srl")).arg("default-config").output().unwrap();
    assert_eq!(code(&o), 0);
    let printed = srl_core::SimConfig::from_json(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert_eq!(printed, srl_core::SimConfig::default());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema_version": 1, "arm": {"stiffness_min": 9000}}"#).unwrap();
    let o = srl(&["track", bad.to_str().unwrap(), "--x", "0", "--y", "650"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("arm.stiffness"));

    let o = srl(&["track", "/nonexistent.json", "--x", "0", "--y", "650"], dir.path());
    assert_eq!(code(&o), 1);

    let o = srl(&["track"], dir.path());
    assert_eq!(code(&o), 1);

    let cfg = config();
    let o = srl(&["track", cfg.to_str().unwrap(), "--x", "0", "--y", "1500"], dir.path());
    assert_eq!(code(&o), 2);
}

struct Child(std::process::Child);

impl Drop for Child {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn read_json(
    ws: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<std::net::TcpStream>>,
) -> serde_json::Value {
    loop {
        match ws.read().expect("websocket read") {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

#[test]
fn serve_streams_state_and_acks_commands() {
    let cfg = config();
    let mut child = Command::new(env!("CARGO_BIN_EXE_srl"))
        .args(["serve", cfg.to_str().unwrap(), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let child = Child(child);
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("listening line").to_string();

    let (mut ws, _) = tungstenite::connect(&url).unwrap();
    let first = read_json(&mut ws);
    assert_eq!(first["type"], "state");
    assert_eq!(first["fsm_state"], "S1_rest");

    ws.send(Message::text(r#"{"type":"button","id":"B1","value":"on"}"#)).unwrap();
    ws.send(Message::text("garbage")).unwrap();
    let (mut acked, mut errored, mut moving) = (false, false, false);
    let deadline = Instant::now() + Duration::from_secs(10);
    while !(acked && errored && moving) && Instant::now() < deadline {
        let v = read_json(&mut ws);
        match v["type"].as_str().unwrap() {
            "ack" => acked = v["accepted"] == true && v["command"] == "button",
            "error" => errored = true,
            "state" => moving |= v["fsm_state"] == "S2_transit",
            other => panic!("unexpected message type {other}"),
        }
    }
    assert!(acked && errored && moving, "ack {acked} error {errored} transit {moving}");

    ws.send(Message::text(r#"{"type":"pause"}"#)).unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut paused = false;
    while !paused && Instant::now() < deadline {
        let v = read_json(&mut ws);
        paused = v["type"] == "ack" && v["command"] == "pause";
    }
    assert!(paused);
    let _ = ws.close(None);
    drop(child);
}
