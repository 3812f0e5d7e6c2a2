use std::path::Path;
use std::process::{Command, Output};

use sdiff_lab::cli::Scenario;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdiff-lab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut Scenario)) -> String {
    let mut s = Scenario::default();
    edit(&mut s);
    let p = dir.join("scenario.toml");
    std::fs::write(&p, s.to_toml().unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn oracle_prints_the_rigid_triple() {
    let o = run(&["oracle"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("PASS rigid annulus triple"), "{out}");
    assert!(out.contains("9.4247779608"));
}

#[test]
fn certificates_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = run(&["certify", "--resolution", "16", "--out", d.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let ca = std::fs::read(a.path().join("certificate.json")).unwrap();
    let cb = std::fs::read(b.path().join("certificate.json")).unwrap();
    assert_eq!(ca, cb);
    let v: serde_json::Value = serde_json::from_slice(&ca).unwrap();
    assert_eq!(v["schema"], "sdiff-lab.divergence-certificate/1");
    assert_eq!(v["witnesses"].as_array().unwrap().len(), 3);
}

#[test]
fn compressive_control_fails_the_divergence_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| {
        s.field = sdiff_lab::cli::scenario::FieldChoice::Gradient;
        s.resolution.divergence_points = 200;
    });
    let o = run(&["verify-field", "--config", &cfg, "--resolution", "16"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("divergence-free"), "{}", stderr(&o));
}

#[test]
fn stirring_field_passes_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s.resolution.divergence_points = 500);
    let out = tempfile::tempdir().unwrap();
    let o = run(&["verify-field", "--config", &cfg, "--resolution", "16", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(out.path().join("verify_field.json").exists());
}

#[test]
fn unsupported_surface_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = Scenario::default().to_toml().unwrap().replace("torus_revolution", "implicit");
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, text).unwrap();
    let o = run(&["energy", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("configuration"));
}

#[test]
fn coarse_time_grid_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s.resolution.steps_per_turn = 8);
    assert_eq!(run(&["massflow", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn doubled_exponent_fails_the_audit() {
    let o = run(&["certify", "--mode", "paper", "--resolution", "16"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("audit block 1"), "{}", stderr(&o));
}

#[test]
fn schedule_writes_one_row_per_block() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["schedule", "--blocks", "5", "--resolution", "16", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.path().join("schedule.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("index,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("schedule.json")).unwrap()).unwrap();
    assert_eq!(json["result"]["balls"].as_array().unwrap().len(), 5);
}

#[test]
fn explicit_default_config_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |_| {});
    let a = run(&["energy", "--resolution", "16"]);
    let b = run(&["energy", "--resolution", "16", "--config", &cfg]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn block_pipeline_reports_all_invariants() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["block", "--resolution", "16", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for name in ["volume preservation", "never stops", "tubular lower bound", "duality"] {
        assert!(text.contains(&format!("PASS {name}")), "{text}");
    }
}
