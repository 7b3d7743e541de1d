use std::path::Path;
use std::process::{Command, Output};

use feqr::cli::{FitCsvRow, FitReport};
use feqr::{load_panel_path, validate, Schema};

fn feqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feqr"))
        .args(args)
        .env_remove("FEQR_WORKERS")
        .output()
        .expect("binary runs")
}

fn generate(dir: &Path, n: &str, t: &str) -> String {
    let path = dir.join("panel.csv").display().to_string();
    let out = feqr(&["generate", "--n", n, "--t", t, "--seed", "1", "--out", &path]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn generate_writes_a_clean_panel() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate(dir.path(), "10", "5");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 51);
    let panel = load_panel_path(&path, &Schema::default()).unwrap();
    assert!(validate(&panel).is_empty());
    assert_eq!((panel.n_units(), panel.n_periods()), (10, 5));
}

#[test]
fn generate_rejects_bad_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv").display().to_string();
    assert_eq!(feqr(&["generate", "--n", "1", "--t", "5", "--seed", "1", "--out", &path]).status.code(), Some(2));
    assert_eq!(feqr(&["generate", "--n", "x", "--t", "5", "--seed", "1", "--out", &path]).status.code(), Some(2));
}

#[test]
fn fit_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate(dir.path(), "30", "8");
    let out = feqr(&["fit", "--data", &path, "--tau", "0.5", "--tau", "0.25", "--json", "--alphas"]);
    assert!(out.status.success());
    let reports: Vec<FitReport> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        assert_eq!(r.alpha_hat.as_ref().unwrap().len(), 30);
        assert!(r.certificate.passes);
        assert_eq!(r.intervals.len(), 2);
        for ci in &r.intervals {
            assert!(ci.lower < ci.estimate && ci.estimate < ci.upper);
        }
    }
}

#[test]
fn fit_csv_is_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate(dir.path(), "20", "6");
    let out = feqr(&["fit", "--data", &path, "--tau", "0.5", "--csv", "--method", "robust"]);
    assert!(out.status.success());
    let rows: Vec<FitCsvRow> = csv::Reader::from_reader(&out.stdout[..])
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, "robust");
}

#[test]
fn fit_text_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate(dir.path(), "20", "6");
    let out = feqr(&["fit", "--data", &path, "--tau", "0.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("tau = 0.5") && text.contains("robust") && text.contains("standard"));
}

#[test]
fn fit_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv").display().to_string();
    let out = feqr(&["fit", "--data", &missing, "--tau", "0.5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MissingFile"));

    let path = generate(dir.path(), "10", "5");
    let out = feqr(&["fit", "--data", &path, "--tau", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("InvalidQuantile"));

    // regressor constant within every unit: intercepts absorb it
    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "unit,time,y,x1\n1,1,0.5,1\n1,2,1.5,1\n1,3,0.1,1\n2,1,2,3\n2,2,2.5,3\n2,3,1,3\n").unwrap();
    let out = feqr(&["fit", "--data", flat.to_str().unwrap(), "--tau", "0.5"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SingularNormalEquations"));

    let dup = dir.path().join("dup.csv");
    std::fs::write(&dup, "unit,time,y,x1\n1,1,0.5,1\n1,1,1.5,2\n").unwrap();
    assert_eq!(feqr(&["fit", "--data", dup.to_str().unwrap(), "--tau", "0.5"]).status.code(), Some(3));
}

fn bundled_config() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/full_design.cfg")
}

#[test]
fn simulate_smoke_and_determinism() {
    let cfg = bundled_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, workers) in dirs.iter().zip(["1", "3"]) {
        let out = feqr(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--replications",
            "2",
            "--workers",
            workers,
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for f in ["report.csv", "table1.csv", "table2.csv", "tables.txt"] {
            assert!(d.path().join(f).exists());
        }
    }
    for f in ["report.csv", "table1.csv", "table2.csv"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let table1 = std::fs::read_to_string(dirs[0].path().join("table1.csv")).unwrap();
    assert_eq!(table1.lines().count(), 1 + 18);
    assert!(table1.starts_with("n_units,n_periods,tau,bias,rmse\n"));
}

#[test]
fn simulate_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "replications = lots\n").unwrap();
    assert_eq!(feqr(&["simulate", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("none.cfg");
    assert_eq!(feqr(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn workers_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "n_units = 20\nn_periods = 5\ntaus = 0.5\nreplications = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_feqr"))
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .env("FEQR_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_feqr"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("FEQR_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
