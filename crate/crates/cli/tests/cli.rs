use std::process::{Command, Output};

use serde_json::Value;

fn lyapunov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapunov"))
        .args(args)
        .env_remove("LYAPUNOV_THREADS")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = lyapunov(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn ok_text(args: &[&str]) -> String {
    let out = lyapunov(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

#[test]
fn exponent_matches_table_values() {
    let g = ok_json(&[
        "exponent",
        "--d",
        "2",
        "--alpha",
        "0.1",
        "--ensemble",
        "gaussian",
        "--scale",
        "0.9950372",
    ]);
    assert!((f(&g["lambda"]) + 0.8215742).abs() < 1e-6, "{g}");
    let o = ok_json(&[
        "exponent",
        "--d",
        "2",
        "--alpha",
        "0.1",
        "--ensemble",
        "orthogonal",
        "--scale",
        "1",
    ]);
    assert!((f(&o["lambda"]) + 0.8745648).abs() < 1e-6, "{o}");
}

#[test]
fn exponent_vanishes_at_reported_critical_scale() {
    let r = ok_json(&["exponent", "--d", "5", "--alpha", "0.01"]);
    let crit = f(&r["sigma_crit"]).to_string();
    let z = ok_json(&["exponent", "--d", "5", "--alpha", "0.01", "--scale", &crit]);
    assert!(f(&z["lambda"]).abs() < 1e-9, "{z}");
}

#[test]
fn table_rows() {
    let csv = ok_text(&["table", "--alpha", "0.1"]);
    assert_eq!(csv.lines().count(), 36);
    let row = csv.lines().find(|l| l.starts_with("10,")).unwrap();
    assert_eq!(
        row,
        "10,0.6651223,1.0996324,-0.1445718,-0.4345101,0.4449942,0.5142106,1.5442064"
    );

    let csv = ok_text(&["table", "--alpha", "0.01", "--dims", "1"]);
    assert!(csv.lines().nth(1).unwrap().starts_with("1,-2.9377665,"));

    let json = ok_json(&[
        "table", "--alpha", "0.001", "--dims", "1024", "--format", "json",
    ]);
    let eta = f(&json["rows"][0]["eta_crit"]);
    assert!((eta - 1.4152515).abs() <= 2e-7, "{eta}");

    let md = ok_text(&["table", "--alpha", "0.1", "--dims", "2,3", "--format", "md"]);
    assert!(md.contains("| 2 |") && md.contains("| 3 |"), "{md}");
}

#[test]
fn lln_at_critical_scale_has_zero_exponent() {
    let r = ok_json(&[
        "simulate",
        "--experiment",
        "lln",
        "--scale",
        "crit",
        "--depth",
        "1000",
        "--trials",
        "200",
        "--seed",
        "7",
    ]);
    assert!(f(&r["mean"]).abs() < 3.0 * f(&r["std_error"]), "{r}");
    assert_eq!(r["seed"], 7);
}

#[test]
fn relu_zero_fraction() {
    let r = ok_json(&[
        "simulate",
        "--experiment",
        "relu-zero",
        "--d",
        "2",
        "--trials",
        "100000",
        "--seed",
        "8",
    ]);
    assert!(
        (f(&r["mean"]) - 0.25).abs() < 3.0 * f(&r["std_error"]),
        "{r}"
    );
}

#[test]
fn clt_writes_sample_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("clt.csv");
    let r = ok_json(&[
        "simulate",
        "--experiment",
        "clt",
        "--scale",
        "crit",
        "--depth",
        "64",
        "--trials",
        "2000",
        "--seed",
        "9",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(f(&r["gamma_hat"]) > 0.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "trial,normalized");
    assert_eq!(text.lines().count(), 2001);
}

#[test]
fn other_experiments_run() {
    let r = ok_json(&[
        "simulate",
        "--experiment",
        "single-step",
        "--d",
        "3",
        "--trials",
        "1000",
        "--seed",
        "1",
    ]);
    assert!(f(&r["z_score"]) < 4.0, "{r}");
    let r = ok_json(&[
        "simulate",
        "--experiment",
        "positive-cone",
        "--alpha",
        "0.5",
        "--depth",
        "100",
        "--trials",
        "100",
        "--seed",
        "2",
    ]);
    assert_eq!(r["cone_violations"], 0);
    let r = ok_json(&[
        "simulate",
        "--experiment",
        "stationarity",
        "--ensemble",
        "orthogonal",
        "--d",
        "3",
        "--depth",
        "2",
        "--trials",
        "1000",
        "--seed",
        "3",
    ]);
    assert_eq!(r["second_moment"].as_array().unwrap().len(), 9);
}

#[test]
fn simulation_output_does_not_depend_on_threads() {
    let args = [
        "simulate",
        "--experiment",
        "clt",
        "--scale",
        "crit",
        "--depth",
        "32",
        "--trials",
        "3000",
        "--seed",
        "11",
    ];
    let one = ok_text(&[&["--threads", "1"][..], &args].concat());
    let four = ok_text(&[&["--threads", "4"][..], &args].concat());
    assert_eq!(one, four);
}

#[test]
fn missing_seed_is_recorded() {
    let out = lyapunov(&["simulate", "--experiment", "single-step", "--trials", "200"]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let seed = r["seed"].as_u64().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("seed: {seed}")));
    let replay = ok_json(&[
        "simulate",
        "--experiment",
        "single-step",
        "--trials",
        "200",
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(replay, r);
}

#[test]
fn init_writes_critical_stack() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let out = lyapunov(&[
            "init",
            "--d",
            "2",
            "--alpha",
            "0.1",
            "--depth",
            "40",
            "--kind",
            "gaussian",
            "--seed",
            "3",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    let stack: Value = serde_json::from_slice(&text).unwrap();
    assert!((f(&stack["ensemble"]["scale"]) - 2.262791).abs() < 1e-5);
    assert_eq!(stack["matrices"].as_array().unwrap().len(), 40);
}

#[test]
fn sampled_init_records_diagnostics() {
    let s = ok_json(&[
        "init",
        "--d",
        "2",
        "--alpha",
        "0.1",
        "--depth",
        "40",
        "--sampled",
        "--seed",
        "4",
    ]);
    let diag = &s["diagnostics"];
    assert_eq!(diag["candidate_count"], 13);
    let scores = diag["per_candidate_score"].as_array().unwrap();
    let best = f(&diag["selection_score"]);
    assert!(scores.iter().all(|v| best <= f(v)));

    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("x.json");
    std::fs::write(&inputs, "[[1.0, 2.0], [-3.0, 0.5]]").unwrap();
    let dist = format!("file:{}", inputs.display());
    let s = ok_json(&[
        "init",
        "--d",
        "2",
        "--alpha",
        "0.1",
        "--depth",
        "9",
        "--sampled",
        "--candidates",
        "4",
        "--input-dist",
        &dist,
        "--kind",
        "orthogonal",
        "--seed",
        "5",
    ]);
    assert_eq!(s["diagnostics"]["probe_inputs"], 2);
    assert_eq!(s["diagnostics"]["candidate_count"], 4);
}

#[test]
fn exit_codes() {
    assert_eq!(lyapunov(&["exponent", "--d", "2"]).status.code(), Some(1));
    assert_eq!(
        lyapunov(&["exponent", "--d", "2", "--alpha", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lyapunov(&["exponent", "--d", "2", "--alpha", "0.1", "--scale", "-1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        lyapunov(&[
            "simulate",
            "--experiment",
            "relu-zero",
            "--ensemble",
            "orthogonal"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        lyapunov(&[
            "simulate",
            "--experiment",
            "stationarity",
            "--csv",
            "x.csv",
            "--seed",
            "1"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(lyapunov(&["--help"]).status.code(), Some(0));
    let out = lyapunov(&[
        "init",
        "--d",
        "2",
        "--alpha",
        "0.1",
        "--depth",
        "3",
        "--seed",
        "1",
        "--out",
        "/nonexistent/dir/x.json",
    ]);
    assert_eq!(out.status.code(), Some(3));
}
