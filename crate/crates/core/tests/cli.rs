use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rbml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbml")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(rbml(&["--help"]).status.code(), Some(0));
    assert_eq!(rbml(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(rbml(&[]).status.code(), Some(1));
    assert_eq!(rbml(&["solve"]).status.code(), Some(1));
    assert_eq!(rbml(&["solve", "--mu", "0.5,0.5"]).status.code(), Some(1), "wrong parameter count");
    assert_eq!(rbml(&["solve", "--mu", "5,0.5,1"]).status.code(), Some(1), "outside the box");
    assert_eq!(rbml(&["info", "--config", "/nonexistent/run.json"]).status.code(), Some(1));
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"problem": {"kind": "heat_test"}, "monte_carlo": {"samples": -3}}"#);
    let out = rbml(&["info", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("monte_carlo.samples"));
}

#[test]
fn info_prints_problem_size() {
    let out = rbml(&["info"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("heat_test"));
    assert!(text.contains("dofs 81 parameters 3 time nodes 50"), "{text}");
}

#[test]
fn solve_fom_and_adaptive_agree() {
    let dir = tempfile::tempdir().unwrap();
    let fom_dir = dir.path().join("fom");
    let ada_dir = dir.path().join("ada");
    let mu = "0.4,0.8,1.2";
    assert_eq!(rbml(&["solve", "--mu", mu, "--out", fom_dir.to_str().unwrap()]).status.code(), Some(0));
    let out = rbml(&["solve", "--mu", mu, "--model", "adaptive", "--eps", "1e-4", "--out", ada_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let read = |p: &Path| -> Vec<(f64, f64)> {
        csv::Reader::from_path(p.join("output.csv"))
            .unwrap()
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[0].parse().unwrap(), r[1].parse().unwrap())
            })
            .collect()
    };
    let a = read(&fom_dir);
    let b = read(&ada_dir);
    assert_eq!(a.len(), 50);
    assert_eq!(a[0].0, 0.0);
    assert!((a[49].0 - 1.0).abs() < 1e-12);
    let dt = a[1].0 - a[0].0;
    let err = a.iter().zip(&b).map(|(x, y)| dt * (x.1 - y.1).powi(2)).sum::<f64>().sqrt();
    assert!(err <= 1e-4, "{err}");
    assert!(ada_dir.join("evals.csv").exists());
    assert!(ada_dir.join("summary.json").exists());
}

#[test]
fn validate_writes_effectivities() {
    let dir = tempfile::tempdir().unwrap();
    let out = rbml(&["validate", "--samples", "5", "--eps", "1e-2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("validate.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "index");
    assert_eq!(&header[4], "output_error");
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let err: f64 = r[4].parse().unwrap();
        let est: f64 = r[5].parse().unwrap();
        assert!(est >= err);
    }
}

#[test]
fn optimize_and_mc_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "problem": {"kind": "heat_test", "nx": 6, "ny": 6, "num_time_nodes": 30},
            "tolerance": {"kind": "fixed", "epsilon": 1e-3},
            "optimize": {"reference": [0.5, 0.7, 1.0], "nelder_mead": {"max_evals": 60}},
            "monte_carlo": {"samples": 12, "audit": 3}
        }"#,
    );
    let opt_dir = dir.path().join("opt");
    let out = rbml(&["optimize", "--config", &cfg, "--out", opt_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(opt_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["evals"].as_u64().unwrap() <= 60);
    assert_eq!(report["mu"].as_array().unwrap().len(), 3);

    let mc_dir = dir.path().join("mc");
    let out = rbml(&["mc", "--config", &cfg, "--seed", "3", "--out", mc_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mc: serde_json::Value = serde_json::from_str(&fs::read_to_string(mc_dir.join("mc.json")).unwrap()).unwrap();
    assert_eq!(mc["n_mc"], 12);
    assert!(mc["variance"].as_f64().unwrap() >= 0.0);
    assert_eq!(mc["audit"].as_array().unwrap().len(), 3);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(mc_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["evals"], 12);
}
