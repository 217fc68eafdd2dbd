use lrd_cli::ingest::read_csv;
use lrd_core::sim::{simulate_model, Model, SimulationSpec};
use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn lrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrd")).args(args).output().expect("spawn lrd")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

fn simulate_to(path: &Path, model: &str, n: usize, d: f64, seed: u64) {
    let out = lrd(&[
        "simulate",
        "--model",
        model,
        "--n",
        &n.to_string(),
        "--d",
        &d.to_string(),
        "--seed",
        &seed.to_string(),
        "-o",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_then_ingest_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m1.csv");
    simulate_to(&path, "m1", 300, 0.2, 11);
    let read = read_csv(&path).unwrap();
    let direct = simulate_model(&SimulationSpec::new(Model::M1, 300, 0.2, 11)).unwrap();
    assert_eq!(read.y(), direct.y());
    assert_eq!(read.x(), direct.x());
}

#[test]
fn simulate_echoes_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = lrd(&["simulate", "--model", "M0", "--n", "100", "--seed", "42", "-o", dir.path().join("a.csv").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed: 42"));
    let auto = lrd(&["simulate", "--model", "M0", "--n", "100", "-o", dir.path().join("b.csv").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&auto.stderr).lines().any(|l| l.starts_with("seed: ")));
}

#[test]
fn mc_emits_eight_rate_rows() {
    let out = lrd(&[
        "mc", "--model", "M0", "--n", "500", "--reps", "300", "--replicates", "100", "--b", "0.2", "--m", "5", "--tau", "0.3",
        "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "test\tlevel\tx\trate\thalf_width");
    assert_eq!(lines.len(), 9);
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split('\t').collect();
        assert_eq!(cells.len(), 5);
        let rate: f64 = cells[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
}

#[test]
fn mc_json_sweeps_memory_grid() {
    let out = lrd(&[
        "mc", "--model", "M1", "--n", "150", "--reps", "50", "--replicates", "100", "--b", "0.2", "--m", "4", "--tau", "0.4",
        "--d-grid", "0,0.3", "--format", "json", "--seed", "9",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["schema"], "lrd.mc/1");
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1]["x"], 0.3);
    assert_eq!(reports[0]["rates"].as_array().unwrap().len(), 8);
    assert_eq!(reports[0]["seed"], 9);
}

#[test]
fn tune_bandwidth_lies_in_gcv_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m1.csv");
    simulate_to(&path, "M1", 400, 0.0, 5);
    let v = stdout_json(&lrd(&["tune", "-i", path.to_str().unwrap(), "--seed", "1"]));
    assert_eq!(v["schema"], "lrd.tune/1");
    let gcv = &v["gcv"];
    let (b, lo, hi) = (gcv["b"].as_f64().unwrap(), gcv["lower"].as_f64().unwrap(), gcv["upper"].as_f64().unwrap());
    assert!(lo <= b && b <= hi, "{lo} <= {b} <= {hi}");
    let sets = v["bandwidths"].as_array().unwrap();
    assert_eq!(sets.len(), 4);
    for s in sets {
        assert_eq!(s["b"].as_f64().unwrap(), b);
        let m = s["m"].as_u64().unwrap() as usize;
        assert!(m >= 2 && m <= 100);
    }
}

#[test]
fn test_report_schema_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lrd.csv");
    simulate_to(&path, "M1", 1000, 0.4, 7);
    let out = lrd(&["test", "-i", path.to_str().unwrap(), "-B", "200", "--seed", "17"]);
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    let v = stdout_json(&out);
    assert!(stderr.contains("seed: 17"));
    assert_eq!(stderr.lines().filter(|l| l.contains("p = ")).count(), 4);
    assert_eq!(v["schema"], "lrd.test/1");
    assert_eq!(v["seed"], 17);
    assert_eq!(v["n"], 1000);
    assert_eq!(v["p"], 2);
    let tests = v["tests"].as_array().unwrap();
    assert_eq!(tests.len(), 4);
    for t in tests {
        let p = t["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(t["B"], 200);
        for key in ["b", "m", "tau", "eta"] {
            assert!(t["selected"][key].is_number());
        }
    }
}

#[test]
fn test_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m0.csv");
    simulate_to(&path, "M0", 200, 0.0, 2);
    let args = ["test", "-i", path.to_str().unwrap(), "-B", "100", "--seed", "5", "--b", "0.2", "--m", "4", "--tau", "0.4"];
    assert_eq!(lrd(&args).stdout, lrd(&args).stdout);
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    simulate_to(&path, "M1", 100, 0.0, 1);
    let file = path.to_str().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(lrd(&["test", "-i", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(lrd(&["test", "-i", file, "--b", "0.7"]).status.code(), Some(4));
    assert_eq!(lrd(&["test", "-i", file, "--tests", ""]).status.code(), Some(4));
    assert_eq!(lrd(&["test", "-i", file, "--tests", "kpss,nope"]).status.code(), Some(4));
    assert_eq!(lrd(&["test", "-i", file, "--no-such-flag"]).status.code(), Some(4));
    assert_eq!(lrd(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,x\n1,2\n3,NA\n4,5\n5,6\n6,7\n7,8\n8,9\n9,1\n").unwrap();
    let out = lrd(&["test", "-i", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2, column 2 (`x`)"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    simulate_to(&path, "M1", 200, 0.0, 4);
    let config = dir.path().join("lrd.json");
    std::fs::write(
        &config,
        r#"{"b": 0.2, "m": 4, "tau": "0.4", "replicates": 100, "seed": 8, "tests": ["kpss", "vs"], "format": "tsv"}"#,
    )
    .unwrap();
    let file = path.to_str().unwrap();
    let cfg = config.to_str().unwrap();

    let from_file = lrd(&["--config", cfg, "test", "-i", file]);
    assert!(from_file.status.success(), "{}", String::from_utf8_lossy(&from_file.stderr));
    let text = String::from_utf8(from_file.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "KPSS");
    assert_eq!(rows[1][0], "V/S");
    assert_eq!(rows[0][3], "100");
    assert_eq!(rows[0][4], "0.2");
    assert!(String::from_utf8_lossy(&from_file.stderr).contains("seed: 8"));

    let flagged = stdout_json(&lrd(&["--config", cfg, "test", "-i", file, "--b", "0.25", "--format", "json", "--seed", "9"]));
    assert_eq!(flagged["seed"], 9);
    assert_eq!(flagged["tests"][0]["selected"]["b"], 0.25);
    assert_eq!(flagged["tests"][0]["selected"]["m"], 4);

    std::fs::write(&config, r#"{"bogus": 1}"#).unwrap();
    assert_eq!(lrd(&["--config", cfg, "test", "-i", file]).status.code(), Some(4));
}
