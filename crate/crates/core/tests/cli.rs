use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const DOUBLING: &str = "map = { kind = \"linear\", domains = [[0.0, 0.5], [0.5, 1.0]] }\n";
const CANTOR: &str = "map = { kind = \"linear\", domains = [[0.0, 0.3333333333333333], [0.6666666666666666, 1.0]] }\n";

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("experiment.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_multifractal"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn map_info_reports_branches() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), DOUBLING, &["map-info"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["branches"].as_array().unwrap().len(), 2);
    assert!(v["parabolic_set"].as_array().unwrap().is_empty());

    let mp = "map = { kind = \"manneville_pomeau\", s = 1.0 }\npotential = { kind = \"indicator\", prefix = \"1\" }\n";
    let o = run(dir.path(), mp, &["map-info"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["parabolic_set"], serde_json::json!([0]));
    assert_eq!(v["parabolic_hull"]["vertices"], serde_json::json!([[1.0]]));
}

#[test]
fn malformed_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "map = { kind = \"tent\" }\n", &["map-info"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    assert!(stderr(&o).contains("error"));
    let o = Command::new(env!("CARGO_BIN_EXE_multifractal"))
        .arg("map-info")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn spectrum_matches_digit_frequency_entropy() {
    let dir = TempDir::new().unwrap();
    let config = format!(
        "seed = 1\n{DOUBLING}potential = {{ kind = \"indicator\", prefix = \"1\" }}\n\
         [spectrum]\ngrid = {{ start = 0.1, stop = 0.9, count = 9 }}\n"
    );
    let o = run(dir.path(), &config, &["spectrum"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let a: f64 = row[0].parse().unwrap();
        let dim: f64 = row[1].parse().unwrap();
        let expected = -(a * a.ln() + (1.0 - a) * (1.0 - a).ln()) / 2f64.ln();
        assert!((dim - expected).abs() < 1e-3, "α {a}: {dim} vs {expected}");
    }
}

#[test]
fn spectrum_empty_grid_and_missing_seed_exit_2() {
    let dir = TempDir::new().unwrap();
    let base = format!("{DOUBLING}potential = {{ kind = \"indicator\", prefix = \"1\" }}\n");
    let o = run(
        dir.path(),
        &format!("seed = 1\n{base}[spectrum]\nalphas = []\n"),
        &["spectrum"],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = run(
        dir.path(),
        &format!("{base}[spectrum]\nalphas = [0.5]\n"),
        &["spectrum"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn spectrum_sup_query_on_cantor() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sup.csv");
    let o = run(
        dir.path(),
        &format!("seed = 2\n{CANTOR}[spectrum]\nsup = true\n"),
        &["spectrum", "--out", out.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let dim: f64 = rows[0][0].parse().unwrap();
    assert!((dim - 2f64.ln() / 3f64.ln()).abs() < 1e-6, "{dim}");
}

#[test]
fn boxdim_of_cantor_and_doubling() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), CANTOR, &["boxdim"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let slope = json(&o)["estimate"]["slope"].as_f64().unwrap();
    assert!((slope - 0.631).abs() < 0.05, "{slope}");

    let o = run(dir.path(), DOUBLING, &["boxdim"]);
    let slope = json(&o)["estimate"]["slope"].as_f64().unwrap();
    assert!((slope - 1.0).abs() < 0.05, "{slope}");

    let o = run(
        dir.path(),
        &format!("{DOUBLING}[boxdim]\ndepth = 0\n"),
        &["boxdim"],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = run(
        dir.path(),
        &format!("{DOUBLING}[boxdim]\ndepth = 40\n"),
        &["boxdim"],
    );
    assert_eq!(o.status.code(), Some(4));
}

fn irregular_config(mu: &str, nu: &str) -> String {
    format!(
        "seed = 5\n{DOUBLING}potential = {{ kind = \"indicator\", prefix = \"1\" }}\n\
         [irregular]\nmu = {{ bernoulli = {mu} }}\nnu = {{ bernoulli = {nu} }}\n\
         stages = 4\npoints = 6\nprofiles = 2\ncloud = 2000\n"
    )
}

#[test]
fn irregular_outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = irregular_config("[0.5, 0.5]", "[0.9, 0.1]");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(
            dir.path(),
            &config,
            &[
                "irregular",
                "--threads",
                "2",
                "--out",
                out.to_str().unwrap(),
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(o.stdout.is_empty());
    }
    for name in [
        "summary.json",
        "schedule.json",
        "oscillation.csv",
        "local_dimension.csv",
        "points.csv",
        "boxdim.csv",
    ] {
        let x = fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(
            x,
            fs::read(b.join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["irregular"], true);
    assert_eq!(summary["local_dimension"]["points"], 6);

    // --seed overrides the config.
    let o = run(dir.path(), &config, &["irregular", "--seed", "6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&o)["seed"], 6);
}

#[test]
fn equal_targets_warn_not_irregular() {
    let dir = TempDir::new().unwrap();
    let o = run(
        dir.path(),
        &irregular_config("[0.5, 0.5]", "[0.5, 0.5]"),
        &["oscillation"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("not irregular"));
    assert!(stdout(&o).starts_with("point,stage,boundary"));
}

#[test]
fn degenerate_phase_exits_4() {
    let dir = TempDir::new().unwrap();
    let o = run(
        dir.path(),
        &irregular_config("[0.5, 0.5]", "[1.0, 0.0]"),
        &["irregular"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("stage 2"), "{}", stderr(&o));
}
