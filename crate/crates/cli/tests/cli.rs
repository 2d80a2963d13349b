use std::path::Path;
use std::process::{Command, Output};

fn cadrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadrl")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_dir(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn benchmark_without_weights_fails() {
    let d = tempfile::tempdir().unwrap();
    let o = cadrl(&["benchmark", "--out-dir", &out_dir(d.path(), "b"), "--cases", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--weights"), "{}", stderr(&o));
}

#[test]
fn missing_weights_file_is_reported() {
    let d = tempfile::tempdir().unwrap();
    let o = cadrl(&[
        "simulate",
        "--out-dir",
        &out_dir(d.path(), "s"),
        "--scenario",
        "swap",
        "--weights",
        "/nonexistent/weights.bin",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/weights.bin"), "{}", stderr(&o));
}

#[test]
fn unknown_scenario_lists_choices() {
    let d = tempfile::tempdir().unwrap();
    let o = cadrl(&["simulate", "--out-dir", &out_dir(d.path(), "s"), "--scenario", "maze", "--policy", "orca"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("unknown scenario 'maze'") && e.contains("swap"), "{e}");
}

#[test]
fn unknown_config_key_rejected() {
    let d = tempfile::tempdir().unwrap();
    let o = cadrl(&["gen-dataset", "--out-dir", &out_dir(d.path(), "g"), "--set", "warp_factor=9"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("warp_factor"), "{}", stderr(&o));
}

#[test]
fn train_needs_a_data_source() {
    let d = tempfile::tempdir().unwrap();
    let o = cadrl(&["train", "--out-dir", &out_dir(d.path(), "t")]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--from-scratch"), "{}", stderr(&o));
}

#[test]
fn orca_simulation_writes_outputs_and_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# overrides\ntimeout = 30\ndt = 0.05\n").unwrap();
    let dir = out_dir(d.path(), "s");
    let o = cadrl(&[
        "simulate",
        "--out-dir",
        &dir,
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "dt=0.1",
        "--scenario",
        "crossing",
        "--alpha",
        "90",
        "--policy",
        "orca",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("s/config.json")).unwrap()).unwrap();
    // Flags beat the file, the file beats defaults.
    assert_eq!(resolved["config"]["dt"], 0.1);
    assert_eq!(resolved["config"]["timeout"], 30.0);
    let csv = std::fs::read_to_string(d.path().join("s/trajectory.csv")).unwrap();
    assert!(csv.lines().count() > 10);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("s/summary.json")).unwrap()).unwrap();
    assert!(summary["min_separation"].as_f64().unwrap() >= 0.0);
}
