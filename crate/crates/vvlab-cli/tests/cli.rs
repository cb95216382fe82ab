use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vvlab::bounds::Bounds;
use vvlab::problem::{FieldSpec, Potential};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vvlab")).args(args).arg("--out").arg(out).output().expect("spawn vvlab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bounds_round_trip_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bounds", "--preset", "example5"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&dir.path().join("bounds.json"));
    let pot = Potential::new(&FieldSpec::preset("example5").unwrap().build().unwrap()).unwrap();
    let b = Bounds::new(&pot).unwrap();
    let rep = b.report(false).unwrap();
    assert_eq!(v["t1"].as_f64().unwrap(), rep.t1);
    assert_eq!(v["t14"].as_f64().unwrap(), rep.t14);
    assert_eq!(v["t16"].as_f64().unwrap(), rep.t16.unwrap());
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "bounds");
    assert!(m["files"].as_array().unwrap().iter().any(|f| f == "g14.csv"));
}

#[test]
fn t15_included_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"preset": "example5", "with_t15": true}"#).unwrap();
    let o = run(&["bounds", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(json(&dir.path().join("bounds.json"))["t15"]["t15"].as_f64().unwrap() > 0.0);
}

#[test]
fn malformed_json_is_config_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"m\": 0.5,\n  oops\n}\n").unwrap();
    let o = run(&["bounds", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.json:3:3"), "{}", stderr(&o));
}

#[test]
fn flat_potential_fails_assumptions() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bounds", "--preset", "flat"], dir.path());
    assert_eq!(code(&o), 3);
    let e = stderr(&o);
    assert!(e.contains("A2") && e.contains("A4"), "{e}");
    assert!(dir.path().join("assumptions.json").exists());
}

#[test]
fn too_many_modes_is_resolution_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"k_max": 500, "n_points": 1000}"#).unwrap();
    let o = run(&["spectrum", "--preset", "example5", "--eps", "0.05", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn missing_eps_list_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["cost-scan", "--preset", "example5"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("eps_list"));
}

#[test]
fn unknown_preset_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["bounds", "--preset", "nope"], dir.path())), 2);
}

#[test]
fn spectrum_per_eps_outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["spectrum", "--preset", "example5", "--eps", "0.08,0.06,0.05"];
    assert_eq!(code(&run(&args, a.path())), 0);
    assert_eq!(code(&run(&args, b.path())), 0);
    for tag in ["0p08", "0p06", "0p05"] {
        for ext in ["csv", "json"] {
            let name = format!("spectrum_{tag}.{ext}");
            let x = fs::read(a.path().join(&name)).unwrap();
            assert!(!x.is_empty());
            assert!(x == fs::read(b.path().join(&name)).unwrap(), "{name} differs");
        }
    }
    let strip = |p: &Path| {
        let mut v = json(&p.join("manifest.json"));
        v["config"]["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(a.path()), strip(b.path()));
}

#[test]
fn localization_only_skips_weyl() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["localization", "--preset", "example5", "--eps", "0.05"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&dir.path().join("spectrum_0p05.json"));
    assert!(v["weyl"].is_null() && v["gaps"].is_null());
    assert_eq!(v["localization"]["modes"].as_array().unwrap().len(), 3);
}

#[test]
fn control_succeeds_and_reports_cost_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["control", "--preset", "example5", "--eps", "0.05"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cost = fs::read_to_string(dir.path().join("cost.csv")).unwrap();
    let header = cost.lines().next().unwrap();
    assert!(header.contains("ln_norm_sq_achieved") && header.contains("ln_bound_predicted_unit_c"));
    let mut rdr = csv::Reader::from_path(dir.path().join("cost.csv")).unwrap();
    let hdr = rdr.headers().unwrap().clone();
    let rec = rdr.records().next().unwrap().unwrap();
    let col = |name: &str| rec[hdr.iter().position(|h| h == name).unwrap()].parse::<f64>().unwrap();
    assert!(col("modal_residual") < 1e-6);
    let ctrl = fs::read_to_string(dir.path().join("control_0p05.csv")).unwrap();
    assert!(ctrl.lines().count() > 10);
}

#[test]
fn control_with_small_family_is_family_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"n_trunc": 1, "t": 3.0}"#).unwrap();
    let o = run(&["control", "--preset", "example5", "--eps", "0.05", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn cost_scan_inside_envelope_between_t14_and_t16() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["cost-scan", "--preset", "example5", "--eps", "0.08,0.06,0.045,0.034,0.025"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&dir.path().join("cost_scan.json"));
    assert_eq!(v["verdict"], "InsideEnvelope");
    assert_eq!(fs::read_to_string(dir.path().join("cost_scan.csv")).unwrap().lines().count(), 6);
}

#[test]
fn example5_runs_bounds_and_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"modules": {"weyl": false, "gaps": false, "localization": false}}"#).unwrap();
    let o = run(&["example5", "--eps", "0.08", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("bounds.json").exists());
    assert!(dir.path().join("spectrum_0p08.csv").exists());
    assert_eq!(json(&dir.path().join("manifest.json"))["config"]["preset"], "example5-minus");
}

#[test]
fn manifest_config_replays_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["spectrum", "--preset", "example5", "--eps", "0.08"], a.path())), 0);
    let cfg = b.path().join("replay.json");
    fs::write(&cfg, json(&a.path().join("manifest.json"))["config"].to_string()).unwrap();
    let o = run(&["spectrum", "--config", cfg.to_str().unwrap()], b.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["spectrum_0p08.csv", "spectrum_0p08.json"] {
        assert!(fs::read(a.path().join(name)).unwrap() == fs::read(b.path().join(name)).unwrap(), "{name} differs");
    }
}
