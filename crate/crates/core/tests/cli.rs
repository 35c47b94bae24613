use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use itsbench::rfanalysis::{save_iq_capture, IqCapture};
use itsbench::trial::load_rx_log;
use num_complex::Complex64;
use serde_json::Value;

fn itsbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itsbench"))
        .args(args)
        .output()
        .expect("spawn itsbench")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tone_capture(dir: &Path) -> PathBuf {
    let fs = 20e6;
    let samples = (0..8192)
        .map(|n| Complex64::from_polar(0.1, 2.0 * PI * 1e6 * n as f64 / fs))
        .collect();
    let cap = IqCapture::new(fs, 5.9e9, samples).unwrap();
    let path = dir.join("tone.iqc");
    save_iq_capture(&cap, &path).unwrap();
    path
}

#[test]
fn spectrum_compliant_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cap = tone_capture(dir.path());
    let mask = dir.path().join("loose.txt");
    std::fs::write(&mask, "0 100\n10e6 100\n").unwrap();
    let out = itsbench(&["analyze", "spectrum", "--capture", s(&cap), "--mask", s(&mask), "--no-burst-filter"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["mask"]["compliant"], true);
    assert_eq!(report["mask"]["violation_count"], 0);
}

#[test]
fn spectrum_violation_exits_two_and_lists_bins() {
    let dir = tempfile::tempdir().unwrap();
    let cap = tone_capture(dir.path());
    let mask = dir.path().join("tight.txt");
    std::fs::write(&mask, "0 100\n0.5e6 100\n0.6e6 -300\n10e6 -300\n").unwrap();
    let json = dir.path().join("report.json");
    let psd_csv = dir.path().join("psd.csv");
    let out = itsbench(&[
        "analyze", "spectrum", "--capture", s(&cap), "--mask", s(&mask), "--no-burst-filter",
        "--out", s(&json), "--psd-csv", s(&psd_csv),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["mask"]["compliant"], false);
    let violations = report["mask"]["violations"].as_array().unwrap();
    assert!(!violations.is_empty());
    assert_eq!(violations.len() as u64, report["mask"]["violation_count"].as_u64().unwrap());

    let mut rdr = csv::Reader::from_path(&psd_csv).unwrap();
    assert_eq!(rdr.records().count() as u64, report["psd"]["n_fft"].as_u64().unwrap());
}

#[test]
fn spectrum_missing_capture_exits_one() {
    let out = itsbench(&["analyze", "spectrum", "--capture", "/nonexistent/x.iqc"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/x.iqc"));
}

#[test]
fn unknown_flag_exits_one() {
    let out = itsbench(&["scenario", "run", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = itsbench(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("analyze"));
}

#[test]
fn scenario_missing_trace_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(data("drive_away.toml")).unwrap();
    let cfg = dir.path().join("broken.toml");
    std::fs::write(&cfg, text.replace("drive_away.csv", "no_such_trace.csv")).unwrap();
    let out = itsbench(&["scenario", "run", "--config", s(&cfg), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_trace.csv"));
}

#[test]
fn scenario_then_trial_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.csv");
    let out = itsbench(&["scenario", "run", "--config", s(&data("drive_away.toml")), "--out", s(&log)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let records = load_rx_log(&log).unwrap();
    assert!(!records.is_empty());

    let prefix = dir.path().join("trial");
    let out = itsbench(&["analyze", "trial", "--log", s(&log), "--out", s(&prefix)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let senders = summary["senders"].as_array().unwrap();
    assert_eq!(senders.len(), 1);
    assert_eq!(senders[0]["records"].as_u64().unwrap(), records.len() as u64);
    assert_eq!(senders[0]["received_sum"].as_u64().unwrap(), records.len() as u64);

    for suffix in ["_windows.geojson", "_clusters.geojson"] {
        let text = std::fs::read_to_string(format!("{}{suffix}", prefix.display())).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "FeatureCollection");
        assert!(!v["features"].as_array().unwrap().is_empty());
    }
    let mut rdr = csv::Reader::from_path(format!("{}_windows.csv", prefix.display())).unwrap();
    assert_eq!(rdr.records().count() as u64, senders[0]["windows"].as_u64().unwrap());
}

#[test]
fn station_runs_from_trace_for_fixed_duration() {
    let out = itsbench(&[
        "station", "--config", s(&data("station.toml")),
        "--gnss", &format!("trace:{}", s(&data("loop.csv"))),
        "--ldm-port", "0", "--forced-period-ms", "100", "--duration-s", "1.5", "--replay-speed", "10",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let tx_rows = stdout.lines().skip(1).filter(|l| l.contains(",TX,")).count();
    assert!(tx_rows >= 5, "only {tx_rows} TX rows:\n{stdout}");
}

#[test]
fn station_invalid_port_is_rejected() {
    let out = itsbench(&[
        "station", "--config", s(&data("station.toml")),
        "--gnss", &format!("trace:{}", s(&data("loop.csv"))),
        "--ldm-port", "70000", "--duration-s", "0.2",
    ]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn station_bad_gnss_source_is_rejected() {
    let out = itsbench(&[
        "station", "--config", s(&data("station.toml")), "--gnss", "serial:/dev/ttyS0", "--duration-s", "0.2",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
