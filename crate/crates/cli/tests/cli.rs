use std::path::Path;
use std::process::{Command, Output};

fn lwa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lwa"))
        .args(args)
        .env_remove("LWA_ETA")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn gen(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name).display().to_string();
    let mut full = vec!["gen"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", &path]);
    let out = lwa(&full);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

// Only the mechanism label can contain a quoted comma, so trailing fields are indexed from the end.
fn field(csv: &str, name: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<_> = lines.next().unwrap().split(',').collect();
    let row: Vec<_> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    if k < 2 {
        row[k].to_string()
    } else {
        row[row.len() - header.len() + k].to_string()
    }
}

#[test]
fn lpoa_row_for_the_convex_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen(dir.path(), "t3.json", &["thm3", "--eps", "0.1"]);
    for mechanism in ["sfpa", "sspa", "convex:0.5,0.5"] {
        let out = lwa(&["lpoa", "-i", &inst, "--mechanism", mechanism, "--grid-step", "0.05"]);
        assert!(out.status.success());
        let csv = stdout(&out);
        assert!(csv.contains(&format!(",{mechanism}")) || csv.contains(&format!(",\"{mechanism}\"")));
        let lpos: f64 = field(&csv, "lpos").parse().unwrap();
        assert!(lpos >= 1.9 - 0.05, "{mechanism}: {lpos}");
    }
}

#[test]
fn solve_structured_report_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen(dir.path(), "v.json", &["vcg", "--alpha", "0.05", "--eps", "0.1"]);
    let out = lwa(&["solve", "-i", &inst, "--mechanism", "vcg", "--grid-step", "0.05", "--format", "structured"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["complete"], true);
    assert!(report["equilibrium_count"].as_u64().unwrap() > 0);
}

#[test]
fn dynamics_mode_converges_on_a_single_item() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen(dir.path(), "e1.json", &["example1", "--lambda", "4"]);
    let out = lwa(&["solve", "-i", &inst, "--mechanism", "sfpa", "--grid-step", "0.25", "--mode", "dynamics"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(field(&stdout(&out), "mode"), "dynamics");
}

#[test]
fn verify_deviation_reports_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen(dir.path(), "t3.json", &["thm3", "--eps", "0.1"]);
    let out = lwa(&["verify-lemma1", "-i", &inst, "--player", "0", "--bundle", "3", "--trials", "300", "--delta", "0.001", "--seed", "7"]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert_eq!(field(&csv, "trials"), "300");
    assert_eq!(field(&csv, "violations"), "0");
}

#[test]
fn verify_rejects_bad_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen(dir.path(), "t3.json", &["thm3", "--eps", "0.1"]);
    let out = lwa(&["verify-lemma1", "-i", &inst, "--player", "0", "--bundle", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_sweep_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("empty.json");
    std::fs::write(&config, r#"{"experiments": []}"#).unwrap();
    let out = lwa(&["sweep", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

#[test]
fn sweep_config_rows_follow_config_order() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        r#"{"experiments": [
            {"instance": {"generator": {"kind": "known_budget", "m": 4}}, "mechanism": "sfpa", "grid_step": 0.25,
             "check": {"check": "lpos_at_least", "bound": 1.1666666666666667, "slack": 0.05}},
            {"instance": {"generator": {"kind": "convex_lower_bound", "eps": 0.1}}, "mechanism": "sspa", "grid_step": 0.05}
        ]}"#,
    )
    .unwrap();
    let out_path = dir.path().join("rows.csv");
    let out = lwa(&["sweep", "--config", config.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_path).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",sfpa,") && lines[1].ends_with(",true"));
    assert!(lines[2].contains(",sspa,"));
}

#[test]
fn failing_bound_exits_one_and_dumps_a_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    std::fs::write(
        &config,
        r#"{"experiments": [
            {"instance": {"generator": {"kind": "convex_lower_bound", "eps": 0.1}}, "mechanism": "sfpa", "grid_step": 0.05,
             "check": {"check": "upper_bound", "factor": 1.0}}
        ]}"#,
    )
    .unwrap();
    let cex = dir.path().join("cex");
    let out = lwa(&["sweep", "--config", config.to_str().unwrap(), "--counterexamples", cex.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).lines().nth(1).unwrap().ends_with(",false"));
    assert_eq!(std::fs::read_dir(cex).unwrap().count(), 1);
}

#[test]
fn gen_round_trips_through_solve_inputs() {
    let dir = tempfile::tempdir().unwrap();
    for (name, args) in [
        ("e2.json", vec!["example2"]),
        ("t4.json", vec!["thm4", "--n", "2", "--m", "4"]),
        ("kb.json", vec!["known-budget", "--m", "3", "--weights", "1,2,3"]),
    ] {
        let path = gen(dir.path(), name, &args);
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert!(doc["players"].as_array().unwrap().len() >= 2, "{name}");
    }
}

#[test]
fn eta_env_var_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("bad.json");
    // v({0,1}) exceeds v({0}) + v({1}) by 0.01
    std::fs::write(
        &inst,
        r#"{"items": 2, "players": [
            {"budget": 1, "valuation": {"kind": "table", "values": {"1": 0.5, "2": 0.5, "3": 1.01}}}]}"#,
    )
    .unwrap();
    let args = ["lpoa", "-i", inst.to_str().unwrap(), "--mechanism", "sfpa", "--grid-step", "0.5"];
    assert_eq!(lwa(&args).status.code(), Some(2));
    let loose = Command::new(env!("CARGO_BIN_EXE_lwa")).args(args).env("LWA_ETA", "0.1").output().unwrap();
    assert!(loose.status.success(), "{}", String::from_utf8_lossy(&loose.stderr));
}

#[test]
fn missing_input_is_an_error() {
    let out = lwa(&["lpoa", "-i", "/nonexistent.json", "--mechanism", "sfpa", "--grid-step", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.json"));
}
