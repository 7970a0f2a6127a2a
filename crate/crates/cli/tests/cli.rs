use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rappi(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rappi"));
    c.args(args).env_remove("RAPPI_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    rappi(args).output().expect("binary runs")
}

/// A scratch directory holding the bundled fixtures.
fn fixtures() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("fx");
    let out = run(&["fixtures", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (tmp, dir)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn derived(report: &Value, name: &str) -> f64 {
    report["derived"].as_array().unwrap().iter().find(|d| d["name"] == name).unwrap()["value"].as_f64().unwrap()
}

fn guard<'a>(report: &'a Value, name: &str) -> &'a str {
    report["guards"].as_array().unwrap().iter().find(|g| g["name"] == name).unwrap()["status"].as_str().unwrap()
}

#[test]
fn depth_sweep_writes_25_rows_peaking_at_two() {
    let (tmp, fx) = fixtures();
    let out_dir = tmp.path().join("out");
    let out = run(&["run", "--config", s(&fx.join("depth-sweep.json")), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("depth_sweep.csv")).unwrap();
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (a, e) = l.split_once(',').unwrap();
            (a.parse().unwrap(), e.parse().unwrap())
        })
        .collect();
    assert_eq!(csv.lines().next(), Some("alpha_L,eta"));
    assert_eq!(rows.len(), 25);
    let peak = rows.iter().copied().fold((0.0, f64::MIN), |b, r| if r.1 > b.1 { r } else { b });
    assert!((peak.0 - 2.0).abs() <= 0.25 + 1e-12, "peak at {}", peak.0);
    let manifest = json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["tool"], "rappi-cli");
    assert_eq!(manifest["config"]["depth_sweep"]["points"], 25);
}

#[test]
fn empty_config_is_a_parse_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("empty.json");
    fs::write(&cfg, "").unwrap();
    let out = run(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "parse");
    assert!(e["error"]["line"].is_number());
}

#[test]
fn unknown_and_unitless_keys_are_rejected_with_their_location() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\n  \"experiment\": \"protocol-run\",\n  \"protocol\": { \"tau1\": 10 }\n}\n").unwrap();
    let out = run(&["validate", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out)["error"].clone();
    assert_eq!(e["kind"], "parse");
    assert_eq!(e["key"], "protocol.tau1");
    assert_eq!(e["line"], 3);
    assert!(e["message"].as_str().unwrap().contains("tau1_us"), "{e}");
}

#[test]
fn missing_config_flag_is_reported_as_json() {
    let out = run(&["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "config");
}

#[test]
fn ram_fixture_schedules_in_at_most_six_events() {
    let (tmp, fx) = fixtures();
    let out_dir = tmp.path().join("out");
    let out = run(&["run", "--config", s(&fx.join("ram-schedule.json")), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sched = json(&out_dir.join("schedule.json"));
    let events = sched["events"].as_array().unwrap();
    assert!(!events.is_empty() && events.len() <= 6, "{} events", events.len());
    assert_eq!(sched["feasible"], true);
    assert_eq!(sched["assignments"].as_array().unwrap().len(), 8);
    assert!(events.iter().all(|e| e["t_start_us"].is_number() && e["tones"].is_array()));
    assert!(sched["violations"].as_array().unwrap().is_empty());
}

#[test]
fn validate_reports_paper_conditions() {
    let (_tmp, fx) = fixtures();
    let out = run(&["validate", "--config", s(&fx.join("paper-rappi-square.json")), "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((derived(&report, "adiabaticity_ratio") - 25.7).abs() < 0.05);
    assert!((derived(&report, "bandwidth_ratio") - 3.4).abs() < 0.05);
    assert!((derived(&report, "t_echo") - 140.0).abs() < 1e-9);
    assert!(derived(&report, "revival_time") > 0.0);
    for g in ["adiabaticity", "bandwidth", "timing", "revival", "window", "step"] {
        assert_eq!(guard(&report, g), "pass", "{g}");
    }

    let text = run(&["validate", "--config", s(&fx.join("paper-rappi.json"))]);
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.contains("adiabaticity_ratio = 25.65"), "{text}");
    assert!(text.contains("overall: pass"));
}

#[test]
fn validate_flags_timing_and_revival_violations() {
    let (_tmp, fx) = fixtures();
    let out = run(&["validate", "--config", s(&fx.join("invalid-timing.json")), "--format", "json"]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(guard(&report, "timing"), "fail");
    assert_eq!(report["pass"], false);

    let out = run(&["validate", "--config", s(&fx.join("revival-failure.json")), "--format", "json"]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(guard(&report, "revival"), "fail");
    assert!((derived(&report, "revival_time") - 100.0).abs() < 1e-6);
    assert_eq!(guard(&report, "timing"), "pass");

    let run_out = run(&["run", "--config", s(&fx.join("invalid-timing.json")), "--out", s(&fx.join("o"))]);
    assert_eq!(run_out.status.code(), Some(1));
    let e = error_json(&run_out);
    assert_eq!(e["error"]["kind"], "physics");
    assert_eq!(e["error"]["module"], "ensemble");
    assert!(e["error"]["message"].as_str().unwrap().contains("tau2"));
}

#[test]
fn outputs_are_identical_across_threads_and_from_the_manifest() {
    let (tmp, fx) = fixtures();
    let cfg = fx.join("paper-2ppe.json");
    let dirs: Vec<PathBuf> = ["t1", "t3", "again"].iter().map(|d| tmp.path().join(d)).collect();
    assert!(run(&["run", "--config", s(&cfg), "--out", s(&dirs[0]), "--threads", "1", "--seed", "5"]).status.success());
    assert!(run(&["run", "--config", s(&cfg), "--out", s(&dirs[1]), "--threads", "3", "--seed", "5"]).status.success());
    let manifest = dirs[0].join("manifest.json");
    assert!(run(&["run", "--config", s(&manifest), "--out", s(&dirs[2])]).status.success());
    for name in ["echo_field.csv", "results.json", "manifest.json"] {
        let a = fs::read(dirs[0].join(name)).unwrap();
        assert_eq!(a, fs::read(dirs[1].join(name)).unwrap(), "{name} differs across thread counts");
        assert_eq!(a, fs::read(dirs[2].join(name)).unwrap(), "{name} differs when rerun from the manifest");
    }
}

#[test]
fn seed_drives_photon_sampling_only() {
    let (tmp, fx) = fixtures();
    let cfg = fx.join("paper-rappi.json");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["run", "--config", s(&cfg), "--out", s(&a), "--seed", "1"]).status.success());
    assert!(run(&["run", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]).status.success());
    assert_eq!(fs::read(a.join("echo_field.csv")).unwrap(), fs::read(b.join("echo_field.csv")).unwrap());
    assert_ne!(fs::read(a.join("photon_counts.csv")).unwrap(), fs::read(b.join("photon_counts.csv")).unwrap());
    let r = json(&a.join("results.json"));
    assert!((r["eta"].as_f64().unwrap() - 0.541).abs() < 0.015);
    assert!((r["t_echo_us"].as_f64().unwrap() - 140.0).abs() < 1e-9);
    assert!(r["suppression_ratio"].is_number() && r["snr"].is_number());
    assert!((r["photon_budget"]["expected_detected"].as_f64().unwrap() - 17.55).abs() < 1e-9);
}

#[test]
fn json_format_and_env_output_dir() {
    let (tmp, fx) = fixtures();
    let env_dir = tmp.path().join("from-env");
    let out = rappi(&["run", "--config", s(&fx.join("fit-published.json")), "--format", "json"])
        .env("RAPPI_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = json(&env_dir.join("fit.json"));
    assert_eq!(fit["form"], "memory");
    let t2m = fit["params"]["T2M"].as_f64().unwrap();
    assert!((t2m / 365.0 - 1.0).abs() < 0.05, "T2M {t2m}");
    assert!(fit["stderr"]["T2M"].is_number() && fit["residual"].is_number());

    let out_dir = tmp.path().join("json");
    assert!(run(&["run", "--config", s(&fx.join("paper-2ppe.json")), "--out", s(&out_dir), "--format", "json"])
        .status
        .success());
    let field = json(&out_dir.join("echo_field.json"));
    assert_eq!(field["columns"], serde_json::json!(["t_s", "re", "im", "abs2"]));
    assert!(!out_dir.join("echo_field.csv").exists());
}

#[test]
fn crosstalk_run_stays_below_threshold() {
    let (tmp, fx) = fixtures();
    let out_dir = tmp.path().join("out");
    let out = run(&["run", "--config", s(&fx.join("crosstalk.json")), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out_dir.join("results.json"));
    assert_eq!(r["passed"], true);
    assert!(r["max_crosstalk_ratio"].as_f64().unwrap() < 0.01);
    let v = json(&out_dir.join("verification.json"));
    assert!(v["cells"].as_array().unwrap().iter().all(|c| c["timing_ok"] == true));
}
