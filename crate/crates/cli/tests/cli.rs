use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taperkrige"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Simulates a field into `dir/sim` and returns the data path.
fn simulated(dir: &Path, body: &str) -> std::path::PathBuf {
    let cfg = write(dir, "sim.json", body);
    let out = dir.join("sim");
    let o = run("simulate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("data.csv")
}

#[test]
fn simulate_writes_rows_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "sim.json",
        r#"{"n": 100, "model": "matern", "sill": 1, "range": 0.1, "seed": 5}"#,
    );
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    assert!(run("simulate", &cfg, &a, &[]).status.success());
    assert!(run("simulate", &cfg, &b, &[]).status.success());
    assert!(run("simulate", &cfg, &c, &["--seed", "6"]).status.success());
    assert_eq!(csv_rows(&a.join("data.csv")).len(), 100);
    for f in ["data.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_ne!(
        fs::read(a.join("data.csv")).unwrap(),
        fs::read(c.join("data.csv")).unwrap()
    );
    assert_eq!(json(&c.join("truth.json"))["seed"], 6);
}

#[test]
fn simulate_refusals() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let big = write(
        dir.path(),
        "big.json",
        r#"{"n": 20001, "model": "matern", "sill": 1, "range": 0.1}"#,
    );
    let o = run("simulate", &big, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("compactly supported"), "{}", stderr(&o));

    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"n": 10, "model": "matern", "sill": -1, "range": 0.1}"#,
    );
    let o = run("simulate", &bad, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sill"));

    let unknown = write(
        dir.path(),
        "unknown.json",
        r#"{"n": 10, "model": "matern", "sill": 1, "range": 0.1, "rnage": 2}"#,
    );
    assert_eq!(run("simulate", &unknown, &out, &[]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_one() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "locs.csv",
        "x,y\n0.2,0.2\n0.2000000000001,0.2\n0.8,0.8\n",
    );
    let cfg = write(
        dir.path(),
        "sim.json",
        r#"{"locations": "locs.csv", "model": "matern", "sill": 1, "range": 0.3,
            "smoothness": 2.5}"#,
    );
    let o = run("simulate", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn variogram_of_constant_field_is_zero() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("x,y,value\n");
    for i in 0..30 {
        text += &format!("{},{},3.5\n", (i % 6) as f64 / 6.0, (i / 6) as f64 / 5.0);
    }
    write(dir.path(), "flat.csv", &text);
    let cfg = write(
        dir.path(),
        "vg.json",
        r#"{"data": "flat.csv", "n_bins": 5}"#,
    );
    let out = dir.path().join("o");
    let o = run("variogram", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("variogram.csv"));
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[3].is_empty() || r[3] == "0"));
    assert!(rows.iter().any(|r| r[3] == "0"));
}

#[test]
fn variogram_plateau_tracks_total_variance() {
    let dir = TempDir::new().unwrap();
    let data = simulated(
        dir.path(),
        r#"{"n": 2500, "model": "matern", "sill": 1.0, "range": 0.02, "nugget": 0.25,
            "seed": 11}"#,
    );
    let cfg = write(
        dir.path(),
        "vg.json",
        &format!(r#"{{"data": {:?}, "max_dist": 0.4, "n_bins": 20}}"#, data),
    );
    let out = dir.path().join("o");
    assert!(run("variogram", &cfg, &out, &[]).status.success());
    // Exponential semivariogram: tau2 + sigma2 (1 - exp(-h / beta)); at h > 0.2 the
    // correlation is below e^-10, so the bins sit at sigma2 + tau2 = 1.25.
    let tail: Vec<f64> = csv_rows(&out.join("variogram.csv"))
        .iter()
        .filter(|r| r[0].parse::<f64>().unwrap() >= 0.2)
        .map(|r| r[3].parse::<f64>().unwrap())
        .collect();
    let plateau = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((plateau - 1.25).abs() < 0.2, "{plateau}");
    let guess = json(&out.join("guess.json"));
    let total =
        guess["params"]["sill"].as_f64().unwrap() + guess["params"]["nugget"].as_f64().unwrap();
    assert!((total - 1.25).abs() < 0.25, "{total}");
}

#[test]
fn empty_input_is_an_ingest_error() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "empty.csv", "");
    let cfg = write(dir.path(), "vg.json", r#"{"data": "empty.csv"}"#);
    assert_eq!(
        run("variogram", &cfg, &dir.path().join("o"), &[])
            .status
            .code(),
        Some(2)
    );
    let cfg = write(dir.path(), "vg2.json", r#"{"data": "nowhere.csv"}"#);
    let o = run("variogram", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.csv"));
}

#[test]
fn estimate_selects_taper_from_smoothness() {
    let dir = TempDir::new().unwrap();
    simulated(
        dir.path(),
        r#"{"n": 300, "model": "matern", "sill": 1, "range": 0.05, "smoothness": 1.0,
            "seed": 2}"#,
    );
    // Brackets: (0, 0.5] spherical, (0.5, 1.5] Wendland1, (1.5, 2.5] Wendland2.
    for (nu, family) in [
        (0.5, "spherical"),
        (0.6, "wendland1"),
        (1.5, "wendland1"),
        (2.0, "wendland2"),
    ] {
        let cfg = write(
            dir.path(),
            "est.json",
            &format!(
                r#"{{"data": "sim/data.csv", "mode": "tapered", "theta": 0.2,
                    "smoothness": {nu}, "max_iterations": 40}}"#
            ),
        );
        let out = dir.path().join(format!("o{nu}"));
        let o = run("estimate", &cfg, &out, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
        let r = json(&out.join("estimate.json"));
        assert_eq!(r["taper"]["family"], family);
        assert_eq!(r["params"]["smoothness"].as_f64().unwrap(), nu);
    }
}

#[test]
fn estimate_auto_order_reports_every_order() {
    let dir = TempDir::new().unwrap();
    simulated(
        dir.path(),
        r#"{"n": 300, "model": "wendland", "sill": 1, "range": 0.2, "order": 2,
            "nugget": 0.05, "seed": 4}"#,
    );
    let cfg = write(
        dir.path(),
        "est.json",
        r#"{"data": "sim/data.csv", "mode": "wendland", "theta": 0.2, "order": "auto"}"#,
    );
    let out = dir.path().join("o");
    let o = run("estimate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&out.join("estimate.json"));
    let scores = r["order_selection"].as_array().unwrap();
    assert_eq!(scores.len(), 3);
    let (best, value) = scores
        .iter()
        .map(|s| {
            (
                s["order"].as_u64().unwrap(),
                s["neg_loglik"].as_f64().unwrap(),
            )
        })
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    assert_eq!(r["model"], format!("wendland{best}"));
    assert_eq!(r["neg_loglik"].as_f64().unwrap(), value);
}

#[test]
fn full_size_single_repeat_is_plain_estimate() {
    let dir = TempDir::new().unwrap();
    simulated(
        dir.path(),
        r#"{"n": 200, "model": "matern", "sill": 1, "range": 0.05, "seed": 8}"#,
    );
    let plain = write(
        dir.path(),
        "plain.json",
        r#"{"data": "sim/data.csv", "mode": "tapered", "theta": 0.15}"#,
    );
    let sized = write(
        dir.path(),
        "sized.json",
        r#"{"data": "sim/data.csv", "mode": "tapered", "theta": 0.15, "size": 500,
            "repeats": 1}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("estimate", &plain, &a, &[]).status.success());
    assert!(run("estimate", &sized, &b, &[]).status.success());
    assert_eq!(
        fs::read(a.join("estimate.json")).unwrap(),
        fs::read(b.join("estimate.json")).unwrap()
    );
    assert_eq!(
        json(&a.join("estimate.json"))["repeats"],
        Value::Array(vec![])
    );
}

#[test]
fn predict_round_trip_and_exactness() {
    let dir = TempDir::new().unwrap();
    let data = simulated(
        dir.path(),
        r#"{"n": 250, "model": "matern", "sill": 1, "range": 0.05, "seed": 9}"#,
    );
    let est = write(
        dir.path(),
        "est.json",
        r#"{"data": "sim/data.csv", "mode": "tapered", "theta": 0.2,
            "free": {"sill": true, "range": true, "nugget": false},
            "initial": {"sill": 1, "range": 0.05, "smoothness": 0.5, "nugget": 0}}"#,
    );
    let fit = dir.path().join("fit");
    assert!(run("estimate", &est, &fit, &[]).status.success());
    let pred = write(
        dir.path(),
        "pred.json",
        r#"{"data": "sim/data.csv", "model": "fit/estimate.json", "targets": "sim/data.csv",
            "chunk_size": 64}"#,
    );
    let out = dir.path().join("o");
    let o = run("predict", &pred, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let observed = csv_rows(&data);
    let predicted = csv_rows(&out.join("predictions.csv"));
    assert_eq!(observed.len(), predicted.len());
    for (z, p) in observed.iter().zip(&predicted) {
        assert_eq!(z[..2], p[..2]);
        let (z, p): (f64, f64) = (z[2].parse().unwrap(), p[2].parse().unwrap());
        assert!((z - p).abs() < 1e-6, "{z} vs {p}");
    }

    // An edited report is refused.
    let mut report = json(&fit.join("estimate.json"));
    report["params"]["sill"] = Value::from(5.0);
    fs::write(
        dir.path().join("edited.json"),
        serde_json::to_string(&report).unwrap(),
    )
    .unwrap();
    let edited = write(
        dir.path(),
        "pred2.json",
        r#"{"data": "sim/data.csv", "model": "edited.json", "targets": "sim/data.csv"}"#,
    );
    let o = run("predict", &edited, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"));

    let missing = write(
        dir.path(),
        "pred3.json",
        r#"{"data": "sim/data.csv", "model": "none.json", "targets": "sim/data.csv"}"#,
    );
    assert_eq!(run("predict", &missing, &out, &[]).status.code(), Some(2));
}

fn evaluate_config(sizes: &str) -> String {
    format!(
        r#"{{"truth": {{"model": "matern", "sill": 1, "range": 0.04, "nugget": 0.1}},
            "n": 300, "n_holdout": 50, "thetas": [0.15], "subsample_sizes": {sizes},
            "mode": "tapered", "free": {{"sill": true, "range": true, "nugget": false}},
            "initial": {{"sill": 1, "range": 0.04, "smoothness": 0.5, "nugget": 0.1}},
            "seed": 21}}"#
    )
}

#[test]
fn evaluate_single_cell() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "ev.json", &evaluate_config("[1000]"));
    let out = dir.path().join("o");
    let o = run("evaluate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("experiment.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "250");
    assert_eq!(rows[0][3], "true");
    assert!(rows[0][4].parse::<f64>().unwrap() > 0.0);
    assert!(rows[0][5].is_empty() && rows[0][6].is_empty());
}

#[test]
fn evaluate_flags_failed_cells() {
    let dir = TempDir::new().unwrap();
    // A subsample of 10 rows is below the minimum and fails; the full-size cell succeeds.
    let cfg = write(dir.path(), "ev.json", &evaluate_config("[10, 1000]"));
    let out = dir.path().join("o");
    let o = run("evaluate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&out.join("experiment.csv"));
    assert_eq!(rows.len(), 2);
    let failed = rows.iter().find(|r| r[1] == "10").unwrap();
    assert!(failed[4..].iter().all(String::is_empty));
    assert!(stderr(&o).contains("failed"));
}
