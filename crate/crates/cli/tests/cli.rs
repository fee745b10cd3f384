use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn drkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drkf")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let output = drkf(&args);
    assert!(
        output.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// Header and numeric body of a CSV file.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

const SMALL_PROJECTILE: &str = r#"{
    "nodes": 6,
    "tolerance": 0.06,
    "horizon": {"initial": 60, "auto_extend": false}
}"#;

const CUSTOM_LINE: &str = r#"{
    "model": {
        "kind": "custom",
        "a": [[0.95, 0.1], [0.0, 0.9]],
        "b": [[0.3, 0.0], [0.05, 0.25]],
        "sensors": [
            {"c": [[1.0, 0.0]], "d": [[0.8]]},
            {"c": [[0.0, 1.0]], "d": [[1.0]]},
            {"c": [[1.0, 1.0]], "d": [[1.2]]}
        ]
    },
    "network": {"rule": {"kind": "line"}},
    "tolerance": 0.02,
    "horizon": {"initial": 60, "auto_extend": false},
    "monte_carlo": {"runs": 200}
}"#;

#[test]
fn validate_accepts_default_projectile_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", "{}");
    let out = drkf(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    assert!(stdout.contains("local observability"));
}

#[test]
fn single_projectile_sensor_fails_in_scenario_stage() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"nodes": 1}"#);
    let out = drkf(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[scenario]"));
}

#[test]
fn unknown_field_fails_in_config_stage() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"tolerence": 0.02}"#);
    let out = drkf(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));
}

#[test]
fn unobservable_custom_neighborhood_fails_validation() {
    let dir = TempDir::new().unwrap();
    let json = r#"{
        "model": {"kind": "custom", "a": [[1.0, 0.0], [0.0, 1.0]], "b": [[1.0, 0.0], [0.0, 1.0]],
                  "sensors": [{"c": [[1.0, 0.0]], "d": [[1.0]]}, {"c": [[0.0, 1.0]], "d": [[1.0]]}]},
        "network": {"rule": {"kind": "explicit", "edges": []}},
        "horizon": {"initial": 20, "auto_extend": false}
    }"#;
    let cfg = write_config(dir.path(), "c.json", json);
    let out = drkf(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL local observability"));
    let out = drkf(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[validation]"));
}

#[test]
fn outputs_are_deterministic_and_well_formed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_PROJECTILE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&cfg, &a, &["--mc-runs", "40"]);
    run(&cfg, &b, &["--mc-runs", "40"]);
    for file in ["msd_avg.csv", "msd_nodes.csv", "theta.csv", "mc_msd_avg.csv", "mc_msd_nodes.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
        let (header, rows) = read_csv(&a.join(file));
        assert!(rows.iter().all(|r| r.len() == header.len()), "{file}");
        assert!(rows.iter().flatten().all(|x| x.is_finite()), "{file}");
    }
    let (header, rows) = read_csv(&a.join("msd_avg.csv"));
    assert_eq!(header.len(), 9);
    assert_eq!(rows.len(), 62);
    let (header, rows) = read_csv(&a.join("theta.csv"));
    assert_eq!(header.len(), 2 + 6);
    assert_eq!(rows.len(), 61);

    let manifest = |dir: &Path| {
        let mut m: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
        m["config"]["output_dir"] = serde_json::Value::Null;
        m
    };
    assert_eq!(manifest(&a), manifest(&b));
}

#[test]
fn manifest_records_resolved_configuration() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_PROJECTILE);
    let out = dir.path().join("o");
    run(&cfg, &out, &["--seed", "7"]);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["master_seed"], 7);
    assert_eq!(m["config"]["network"]["seed"], 7);
    assert_eq!(m["config"]["epsilon"], 0.1);
    assert_eq!(m["config"]["window"], serde_json::json!([0.5, 0.9]));
    assert_eq!(m["horizon"]["resolved"], 60);
    assert_eq!(m["horizon"]["window"], serde_json::json!([30, 54]));
    assert_eq!(m["network"]["sensor_types"].as_array().unwrap().len(), 6);
    assert_eq!(m["network"]["permutations"].as_array().unwrap().len(), 6);
    assert_eq!(m["steady"].as_array().unwrap().len(), 8);
    assert!(m["monte_carlo"].is_null());
}

#[test]
fn seed_changes_the_generated_network() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_PROJECTILE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&cfg, &a, &["--seed", "1"]);
    run(&cfg, &b, &["--seed", "2"]);
    let net = |d: &Path| {
        let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("manifest.json")).unwrap()).unwrap();
        m["network"].clone()
    };
    assert_ne!(net(&a), net(&b));
}

#[test]
fn zero_tolerance_robust_columns_equal_standard_ones() {
    let dir = TempDir::new().unwrap();
    let json = SMALL_PROJECTILE.replace("0.06", "0.0");
    let cfg = write_config(dir.path(), "c.json", &json);
    let out = dir.path().join("o");
    run(&cfg, &out, &[]);
    for file in ["msd_avg.csv", "msd_nodes.csv"] {
        let (header, rows) = read_csv(&out.join(file));
        for (i, label) in header.iter().enumerate().filter(|(_, h)| h.starts_with("rkf_")) {
            let j = header.iter().position(|h| *h == label[1..]).unwrap();
            for row in &rows {
                assert!((row[i] - row[j]).abs() <= 1e-12 * row[j].abs().max(1.0), "{file} {label}");
            }
        }
    }
}

#[test]
fn node_thetas_stay_below_central_theta() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_PROJECTILE);
    let out = dir.path().join("o");
    run(&cfg, &out, &[]);
    let (_, rows) = read_csv(&out.join("theta.csv"));
    for row in rows.iter().skip(1) {
        let max_node = row[2..].iter().cloned().fold(f64::MIN, f64::max);
        assert!(max_node < row[1], "t = {}", row[0]);
    }
}

#[test]
fn custom_model_with_monte_carlo_tracks_analysis() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", CUSTOM_LINE);
    let out = dir.path().join("o");
    run(&cfg, &out, &[]);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert!(m["network"]["sensor_types"].is_null());
    assert_eq!(m["network"]["edges"], serde_json::json!([[0, 1], [1, 2]]));
    assert_eq!(m["monte_carlo"]["runs"], 200);
    let analytic = m["steady"].as_array().unwrap();
    let empirical = m["monte_carlo"]["steady"].as_array().unwrap();
    for (a, e) in analytic.iter().zip(empirical) {
        assert_eq!(a["variant"], e["variant"]);
        let (a, e) = (a["msd"].as_f64().unwrap(), e["msd"].as_f64().unwrap());
        // 200 runs averaged over a 25-step window: loose agreement only.
        assert!((a - e).abs() / a < 0.15, "{a} vs {e}");
    }
}

#[test]
fn variant_subset_controls_columns() {
    let dir = TempDir::new().unwrap();
    let json = r#"{"nodes": 6, "variants": ["kf_local", "rkf_diff"], "horizon": {"initial": 30, "auto_extend": false}}"#;
    let cfg = write_config(dir.path(), "c.json", json);
    let out = dir.path().join("o");
    run(&cfg, &out, &[]);
    let (header, _) = read_csv(&out.join("msd_avg.csv"));
    assert_eq!(header, vec!["t", "kf_local", "rkf_diff"]);
}
