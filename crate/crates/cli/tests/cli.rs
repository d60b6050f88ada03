use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn covlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covlab"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove("COVLAB_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(k).unwrap().parse().unwrap())
        .collect()
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let out = covlab(
        dir,
        &["synth", "--family", "exponential", "--alpha-g", "0.005", "--n", "100", "--seed", "4"],
    );
    assert_eq!(out.status.code(), Some(0));
    dir.join("samples.csv")
}

#[test]
fn validate_reports_table_verdict() {
    let dir = TempDir::new().unwrap();
    let out = covlab(
        dir.path(),
        &["validate", "--family", "stable", "--alpha2", "1.5", "--domain", "sphere"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["verdict"]["status"], "known-invalid");

    let out = covlab(
        dir.path(),
        &["validate", "--family", "brc", "--alpha2", "0.5", "--domain", "sphere-env"],
    );
    assert_eq!(stdout_json(&out)["verdict"]["status"], "unknown");
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn reference_grid_counterexample() {
    let dir = TempDir::new().unwrap();
    for unit in ["radians", "degrees"] {
        let out = covlab(
            dir.path(),
            &[
                "counterexample", "--family", "brc", "--alpha2", "1.01", "--domain", "sphere-env",
                "--grid-312", "--angle-unit", unit,
            ],
        );
        assert_eq!(out.status.code(), Some(2), "{unit}");
        let v = stdout_json(&out);
        assert!(v["certificate"]["lambda_min"].as_f64().unwrap() < 0.0);
        let witness = fs::read_to_string(dir.path().join("witness.csv")).unwrap();
        assert_eq!(witness.lines().count(), 10);
        assert_eq!(column(&witness, "lat"), vec![60.0; 9]);
        let cert: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("certificate.json")).unwrap())
                .unwrap();
        assert_eq!(cert["verdict"], "not-pd");
    }
}

#[test]
fn searched_counterexample_and_gram_on_witness() {
    let dir = TempDir::new().unwrap();
    let out = covlab(
        dir.path(),
        &["counterexample", "--family", "stable", "--alpha2", "2.5", "--domain", "euclidean:2", "--seed", "1"],
    );
    assert_eq!(out.status.code(), Some(2));
    let witness = dir.path().join("witness.csv");
    // The witness file certifies as not positive definite on its own.
    let out = covlab(
        dir.path(),
        &["gram", "--family", "stable", "--alpha2", "2.5", "--samples", witness.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = covlab(
        dir.path(),
        &["gram", "--family", "stable", "--alpha2", "1.0", "--samples", witness.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["verdict"], "pd");
}

#[test]
fn krige_exponential_and_triangle() {
    let dir = TempDir::new().unwrap();
    let samples = synth(dir.path());
    let s = samples.to_str().unwrap();
    let out = covlab(
        dir.path(),
        &["krige", "--family", "exponential", "--alpha-g", "0.005", "--samples", s, "--grid", "20"],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    let v = column(&csv, "variance");
    assert_eq!(v.len(), 400);
    assert!(v.iter().all(|&x| (0.0..=1.0 + 1e-9).contains(&x)));

    let out = covlab(
        dir.path(),
        &["krige", "--family", "triangle", "--alpha-g", "0.0033", "--samples", s, "--grid", "50"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("negative"));
    let csv = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    assert!(column(&csv, "variance").iter().any(|&x| x < 0.0));
}

#[test]
fn fit_and_simulate() {
    let dir = TempDir::new().unwrap();
    let samples = synth(dir.path());
    let s = samples.to_str().unwrap();
    let out = covlab(
        dir.path(),
        &[
            "fit", "--family", "exponential", "--alpha-g", "0.01", "--samples", s, "--bin-width", "50",
            "--max-lag", "400",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let fit: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["fit"]["model"]["family"], "exponential");
    assert!(fit["fit"]["model"]["alphaG"].as_f64().unwrap() > 0.0);

    let out = covlab(
        dir.path(),
        &["simulate", "--family", "exponential", "--samples", s, "--count", "3", "--seed", "2"],
    );
    assert_eq!(out.status.code(), Some(0));
    let sims = fs::read_to_string(dir.path().join("simulations.csv")).unwrap();
    assert_eq!(sims.lines().count(), 101);
    assert!(sims.starts_with("id,x,y,e,sim1,sim2,sim3"));
}

#[test]
fn invalid_models_are_refused() {
    let dir = TempDir::new().unwrap();
    let out = covlab(
        dir.path(),
        &["synth", "--family", "triangle", "--alpha-g", "0.0016666666666666668", "--seed", "3"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["refused"], true);
    assert!(!dir.path().join("samples.csv").exists());
}

#[test]
fn nd_test_exit_codes() {
    let dir = TempDir::new().unwrap();
    let fail = covlab(
        dir.path(),
        &["nd-test", "--variogram", r#"{"form":"brc-exponent","params":{"spatialDim":2,"alpha":1.5}}"#],
    );
    assert_eq!(fail.status.code(), Some(2));
    let v = stdout_json(&fail);
    assert_eq!(v["negativeDefinite"]["outcome"], "fail");
    assert!(v["schoenbergWitness"]["certificate"]["lambda_min"].as_f64().unwrap() < 0.0);

    let file = dir.path().join("g.json");
    fs::write(
        &file,
        r#"{"form":"subordinated","params":{"bernstein":{"form":"power","params":{"alpha":0.5}}},
            "children":[{"form":"squared-norm","params":{"dim":3}}]}"#,
    )
    .unwrap();
    let pass = covlab(dir.path(), &["nd-test", "--variogram-file", file.to_str().unwrap()]);
    assert_eq!(pass.status.code(), Some(0));
    assert_eq!(stdout_json(&pass)["negativeDefinite"]["outcome"], "pass");
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let out = covlab(dir.path(), &["gram", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = covlab(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = covlab(dir.path(), &["validate", "--family", "nope", "--domain", "sphere"]);
    assert_eq!(out.status.code(), Some(1));
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = covlab(dir.path(), &["gram", "--family", "stable", "--samples", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_covlab")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn seed_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_covlab"))
        .args(["--out-dir", dir.path().to_str().unwrap(), "synth", "--family", "exponential", "--n", "5"])
        .env("COVLAB_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 17);
}

#[test]
fn report_replays_bit_for_bit() {
    let first = TempDir::new().unwrap();
    synth(first.path());
    let report: Value =
        serde_json::from_str(&fs::read_to_string(first.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "synth");
    assert_eq!(report["seed"], 4);

    // Re-run the recorded arguments with a different output directory.
    let second = TempDir::new().unwrap();
    let mut args: Vec<String> = report["args"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap().to_string())
        .collect();
    let k = args.iter().position(|a| a == "--out-dir").unwrap();
    args[k + 1] = second.path().to_str().unwrap().to_string();
    let out = Command::new(env!("CARGO_BIN_EXE_covlab"))
        .args(&args)
        .env_remove("COVLAB_SEED")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read(first.path().join("samples.csv")).unwrap(),
        fs::read(second.path().join("samples.csv")).unwrap()
    );
    let replayed: Value =
        serde_json::from_str(&fs::read_to_string(second.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(replayed["result"], report["result"]);
}
