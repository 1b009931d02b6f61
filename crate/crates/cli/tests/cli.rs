use std::path::Path;
use std::process::{Command, Output};

fn simctl(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_simctl"))
        .args(&args[..1])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(&args[1..])
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn header(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect()
}

#[test]
fn negative_h_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = simctl(dir.path(), r#"{"h": -0.1}"#, &["run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("h must be positive"), "{}", stderr(&o));
}

#[test]
fn malformed_and_unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simctl(dir.path(), "{", &["run"]).status.code(), Some(1));
    let o = simctl(dir.path(), r#"{"sampling": 0.1}"#, &["run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sampling"));
}

#[test]
fn empty_h_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = simctl(dir.path(), r#"{"sweep": {"h_grid": []}}"#, &["sweep"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("h_grid"));
}

#[test]
fn single_h_convergence_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = simctl(
        dir.path(),
        r#"{"convergence": {"h_list": [0.01]}}"#,
        &["convergence"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("h_list"));
}

#[test]
fn pd_run_writes_three_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = simctl(
        dir.path(),
        r#"{"experiment": "two_link_pd"}"#,
        &["run", "--T", "2"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    for stem in ["target", "symplectic", "quasi"] {
        let h = header(&out.join(format!("{stem}.csv")));
        assert_eq!(h.len(), 1 + 5 * 2 + 2);
        assert_eq!(h[0], "t");
        assert!(out.join(format!("{stem}.json")).exists());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["h"], 0.02);
    assert_eq!(summary["config"]["T"], 2.0);
    assert!(
        summary["runs"]["symplectic"]["mean_solve_seconds"]
            .as_f64()
            .unwrap()
            > 0.0
    );
}

#[test]
fn mode_flag_limits_the_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = simctl(
        dir.path(),
        "{}",
        &[
            "run",
            "--T",
            "1",
            "--mode",
            "symplectic",
            "--feedback",
            "position",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(out.join("symplectic.csv").exists());
    assert!(!out.join("quasi.csv").exists());
}

#[test]
fn tracking_run_writes_tool_centre_point_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = simctl(
        dir.path(),
        r#"{"experiment": "two_link_computed_torque"}"#,
        &["run", "--T", "4"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    for stem in ["target", "symplectic", "quasi"] {
        assert_eq!(
            header(&out.join(format!("tcp_{stem}.csv"))),
            ["t", "x_tcp", "y_tcp", "x_ref", "y_ref"]
        );
    }
}

#[test]
fn small_sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        r#"{"sweep": {"h_grid": [0.1], "c_start": 0.5, "c_stop": 1.5, "c_step": 0.5, "T": 20}}"#;
    let o = simctl(dir.path(), cfg, &["sweep"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert_eq!(
        header(&out.join("sweep.csv")),
        [
            "h",
            "c_max_qc",
            "c_max_symp",
            "u_norm",
            "q_norm_qc",
            "q_norm_symp"
        ]
    );
    assert!(out.join("sweep.json").exists());
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"sweep": {"h_grid": [0.1], "c_stop": 0.1}}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_simctl"))
        .args(["sweep", "--config"])
        .arg(&cfg)
        .env("SIMCTL_THREADS", "many")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_stage_solve_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"newton": {"max_iter": 1, "abs_tol": 1e-300}}"#;
    let o = simctl(
        dir.path(),
        cfg,
        &["run", "--T", "1", "--mode", "symplectic"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
