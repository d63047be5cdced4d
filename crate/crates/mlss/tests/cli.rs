//! End-to-end tests of the shipped binary: exit codes, report schema, and
//! reproducibility of simulate outputs.

use mlss::rng::{seed_rng, standard_normal};
use std::io::Write;
use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mlss")
}

/// CSV with a strong linear first stage: d = w + noise, y = 1 + 1.5 d + u.
fn write_strong_csv(path: &Path, n: usize, constant_d: bool, irrelevant: bool) {
    let mut rng = seed_rng(11);
    let mut file = std::fs::File::create(path).unwrap();
    writeln!(file, "y,d_dose,w_judge,x_age").unwrap();
    for _ in 0..n {
        let w = standard_normal(&mut rng);
        let x = standard_normal(&mut rng);
        let u = standard_normal(&mut rng);
        let d = if constant_d {
            1.0
        } else if irrelevant {
            standard_normal(&mut rng)
        } else {
            2.0 * w + 0.5 * u + 0.3 * standard_normal(&mut rng)
        };
        let y = 1.0 + 1.5 * d + 0.2 * x + u;
        writeln!(file, "{y},{d},{w},{x}").unwrap();
    }
}

#[test]
fn estimate_happy_path_reports_every_treatment() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_strong_csv(&csv, 300, false, false);
    let out = dir.path().join("report.json");
    let status = Command::new(bin())
        .args(["estimate", "--data"])
        .arg(&csv)
        .args(["--seed", "3", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let names: Vec<&str> = report["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, vec!["const", "d_dose", "x_age"]);
    // Reproducibility closure: the resolved config and seed are embedded.
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["config"]["learner"]["kind"], "gradient_boosting");
    assert_eq!(report["config"]["folds"], 2);
    assert!(report["diagnostics"]["first_stage_f"].as_array().unwrap().len() == 1);
}

#[test]
fn estimate_constant_treatment_exits_2_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_strong_csv(&csv, 120, true, false);
    let out = dir.path().join("report.json");
    let output = Command::new(bin())
        .args(["estimate", "--data"])
        .arg(&csv)
        .args(["--learner", "ols", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["error"]["kind"], "weak_identification");
    assert!(report["error"]["guidance"].as_str().unwrap().contains("ar"));
}

#[test]
fn estimate_missing_file_exits_1() {
    let status = Command::new(bin())
        .args(["estimate", "--data", "/nonexistent/nowhere.csv"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn estimate_csv_format_flattens_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_strong_csv(&csv, 200, false, false);
    let output = Command::new(bin())
        .args(["estimate", "--data"])
        .arg(&csv)
        .args(["--learner", "ols", "--format", "csv"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.starts_with("name,estimate,std_error,ci_lo,ci_hi"));
    assert_eq!(text.lines().count(), 1 + 3);
}

#[test]
fn ar_strong_instrument_gives_finite_interval_covering_the_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_strong_csv(&csv, 600, false, false);
    let out = dir.path().join("ar.json");
    let status = Command::new(bin())
        .args(["ar", "--data"])
        .arg(&csv)
        .args(["--learner", "ols", "--alpha", "0.05", "--folds", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["per_fold_level"], 0.025);
    assert_eq!(report["combined"]["shape"], "finite_interval");
    let tau = report["pooled_tau"].as_f64().unwrap();
    let iv = &report["combined"]["intervals"][0];
    assert!(iv[0].as_f64().unwrap() <= tau && tau <= iv[1].as_f64().unwrap());
    assert_eq!(report["per_fold_sets"].as_array().unwrap().len(), 2);
}

#[test]
fn ar_irrelevant_instrument_is_unbounded() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_strong_csv(&csv, 600, false, true);
    let output = Command::new(bin())
        .args(["ar", "--data"])
        .arg(&csv)
        .args(["--learner", "ols"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8(output.stdout).unwrap()).unwrap();
    let shape = report["combined"]["shape"].as_str().unwrap();
    assert!(
        shape == "whole_line" || shape == "two_rays",
        "irrelevant instrument produced {shape}"
    );
}

#[test]
fn simulate_unknown_estimator_exits_1_listing_names() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"dgp": "nocov", "n": [200], "reps": 2, "estimators": ["lightgbm"]}"#,
    )
    .unwrap();
    let output = Command::new(bin())
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("valid names"), "stderr was: {stderr}");
}

#[test]
fn simulate_same_seed_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"dgp": "nocov", "n": [400], "reps": 6, "estimators": ["oracle", "lin"], "seed": 9}"#,
    )
    .unwrap();
    let run = |out: &Path| {
        let status = Command::new(bin())
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        (
            std::fs::read(out.join("report.json")).unwrap(),
            std::fs::read(out.join("replications.csv")).unwrap(),
        )
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let (r1, c1) = run(d1.path());
    let (r2, c2) = run(d2.path());
    assert_eq!(r1, r2);
    assert_eq!(c1, c2);
}

#[test]
fn ar_with_two_treatments_needs_and_accepts_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let mut rng = seed_rng(31);
    let mut file = std::fs::File::create(&csv).unwrap();
    writeln!(file, "y,d_a,d_b,w_1,w_2").unwrap();
    for _ in 0..400 {
        let w1 = standard_normal(&mut rng);
        let w2 = standard_normal(&mut rng);
        let da = 2.0 * w1 + 0.3 * standard_normal(&mut rng);
        let db = 2.0 * w2 + 0.3 * standard_normal(&mut rng);
        let y = 1.0 + da - 0.5 * db + standard_normal(&mut rng);
        writeln!(file, "{y},{da},{db},{w1},{w2}").unwrap();
    }
    drop(file);

    // Without a grid: input error.
    let output = Command::new(bin())
        .args(["ar", "--data"])
        .arg(&csv)
        .args(["--learner", "ols"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));

    // With a grid: accepted points near the truth (1, -0.5).
    let output = Command::new(bin())
        .args(["ar", "--data"])
        .arg(&csv)
        .args(["--learner", "ols", "--tau-grid", "-1:1.5:0.25"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8(output.stdout).unwrap()).unwrap();
    let accepted = report["accepted_points"].as_array().unwrap();
    assert!(!accepted.is_empty());
    assert!(accepted.iter().any(|p| {
        (p[0].as_f64().unwrap() - 1.0).abs() < 1e-9 && (p[1].as_f64().unwrap() + 0.5).abs() < 1e-9
    }));
}

#[test]
fn usage_errors_exit_1_not_2() {
    let output = Command::new(bin()).args(["estimate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let output = Command::new(bin()).args(["--help"]).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
}
