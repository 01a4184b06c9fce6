//! End-to-end runs of the `fnar` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fnar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fnar")).args(args).output().expect("run fnar")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

fn simulate(dir: &Path, n: &str, t: &str, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--n", n, "--T", t, "--seed", "3", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    fnar(&args)
}

#[test]
fn simulate_then_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = simulate(d, "40", "5", &["--r", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["outcomes.csv", "covariates.csv", "weights.csv", "truth.csv", "fixed_effects_true.csv"] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
    let p = |f: &str| d.join(f).to_str().unwrap().to_string();
    let out = fnar(&[
        "estimate",
        "--outcomes",
        &p("outcomes.csv"),
        "--covariates",
        &p("covariates.csv"),
        "--weights",
        &p("weights.csv"),
        "--operator",
        "epanechnikov",
        "--L",
        "10",
        "--ktilde",
        "2",
        "--estimator",
        "gmm1",
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let truth = column(&d.join("truth.csv"), "alpha");
    let est = column(&d.join("alpha.csv"), "estimate");
    assert_eq!(truth.len(), est.len());
    let rmse = (truth.iter().zip(&est).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64).sqrt();
    assert!(rmse < 0.25, "alpha rmse {rmse}");
    let lo = column(&d.join("alpha.csv"), "ci_lo");
    let hi = column(&d.join("alpha.csv"), "ci_hi");
    assert!(lo.iter().zip(&est).zip(&hi).all(|((l, e), h)| l <= e && e <= h));
    assert!(d.join("beta1.csv").is_file());
    assert!(d.join("fixed_effects.csv").is_file());

    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["basis"]["K"], 6);
    assert_eq!(fit["theta"].as_array().unwrap().len(), 12);

    // Multipliers from the fitted model.
    let shock = d.join("eta.csv");
    fs::write(&shock, "s,eta\n0,1\n1,1\n").unwrap();
    let out = fnar(&[
        "effects",
        "impulse",
        "--fit",
        &p("fit.json"),
        "--weights",
        &p("weights.csv"),
        "--unit",
        "0",
        "--shock-file",
        shock.to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("per_order.csv").is_file());
    assert!(d.join("cumulative.csv").is_file());
}

#[test]
fn missing_output_directory_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&dir.path().join("absent"), "10", "3", &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn explosive_design_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), "40", "3", &["--alpha-scale", "2"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn single_period_cannot_be_differenced() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&simulate(d, "10", "1", &[])), 0);
    let p = |f: &str| d.join(f).to_str().unwrap().to_string();
    let out = fnar(&[
        "estimate",
        "--outcomes",
        &p("outcomes.csv"),
        "--covariates",
        &p("covariates.csv"),
        "--weights",
        &p("weights.csv"),
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn key_player_of_a_star_is_the_hub() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut edges = String::from("i,j,weight\n");
    for k in 1..5 {
        edges.push_str(&format!("0,{k},0.25\n{k},0,1\n"));
    }
    fs::write(d.join("w.csv"), edges).unwrap();
    fs::write(d.join("alpha.csv"), "s,value\n0,0.4\n1,0.4\n").unwrap();
    fs::write(d.join("eta.csv"), "s,eta\n0,1\n1,1\n").unwrap();
    let p = |f: &str| d.join(f).to_str().unwrap().to_string();
    let out = fnar(&[
        "effects",
        "keyplayer",
        "--alpha-file",
        &p("alpha.csv"),
        "--weights",
        &p("w.csv"),
        "--shock-file",
        &p("eta.csv"),
        "--operator",
        "point-eval",
        "--orders",
        "20",
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0");
    let impacts = column(&d.join("impacts.csv"), "total_impact");
    assert_eq!(impacts.len(), 5);
    assert!(impacts[1..].iter().all(|&v| v < impacts[0]));
}

#[test]
fn montecarlo_preset_prints_table() {
    let out = fnar(&[
        "montecarlo",
        "--preset",
        "paper-table1-row1-r1",
        "--replications",
        "4",
        "--estimators",
        "gmm1,2sls",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,T,L,Ktilde,r,estimator,target,bias,rmse");
    assert_eq!(lines.len(), 5);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("fnar.toml");
    fs::write(&cfg, format!("[simulate]\nn = 12\nT = 2\nseed = 9\nout = {:?}\n", d.to_str().unwrap())).unwrap();
    let out = fnar(&["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(column(&d.join("covariates.csv"), "x1").len(), 24);
}

#[test]
fn usage_errors() {
    assert_eq!(code(&fnar(&["--help"])), 0);
    assert_eq!(code(&fnar(&["simulate", "--bogus"])), 4);
    assert_eq!(code(&fnar(&["estimate", "--estimator", "ols", "--outcomes", "x", "--covariates", "y"])), 2);
}
