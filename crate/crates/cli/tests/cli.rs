use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use geoflow_core::data_io::{read_scalar, read_vector, write_scalar, write_vector};
use geoflow_core::{Grid, VectorField};

fn geoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoflow"))
        .args(args)
        .env_remove("GEOFLOW_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shoot_without_v0_is_a_usage_error_naming_the_flag() {
    let out = geoflow(&["shoot", "--out-dir", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--v0"), "{}", stderr(&out));
}

#[test]
fn version_prints_and_exits_zero() {
    let out = geoflow(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn unknown_flag_and_missing_files_exit_one() {
    assert_eq!(geoflow(&["shoot", "--bogus"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = geoflow(&["shoot", "--v0", "/nonexistent.gfld", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--v0"));
    let out = geoflow(&["make-data", "--family", "squares", "--n", "2", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--family"));
}

#[test]
fn invalid_thread_override_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_geoflow"))
        .args(["make-data", "--family", "circles", "--n", "1", "--dims", "16", "--out", s(dir.path())])
        .env("GEOFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("GEOFLOW_THREADS"));
    assert_eq!(geoflow(&["--threads", "0", "make-data", "--family", "circles", "--n", "1", "--out", s(dir.path())]).status.code(), Some(1));
}

#[test]
fn blow_up_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::square(16).unwrap();
    let v0 = VectorField::from_fn(grid, |x| [1e150 * (6.283 * x[1]).sin(), 1e150 * (6.283 * x[0]).cos(), 0.0]);
    let path = dir.path().join("v0.gfld");
    write_vector(&path, &v0).unwrap();
    let out = geoflow(&["shoot", "--v0", s(&path), "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn shoot_writes_every_step_and_energy() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::square(16).unwrap();
    let v0 = VectorField::from_fn(grid, |x| [0.01 * (6.283 * x[1]).sin(), 0.01 * (6.283 * x[0]).cos(), 0.0]);
    let path = dir.path().join("v0.gfld");
    write_vector(&path, &v0).unwrap();
    let out_dir = dir.path().join("shot");
    let out = geoflow(&["shoot", "--v0", s(&path), "--steps", "5", "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = csv_rows(&out_dir.join("energy.csv"));
    assert_eq!(rows[0], ["step", "t", "energy"]);
    assert_eq!(rows.len(), 7);
    assert_eq!(read_vector(&out_dir.join("v_000.gfld")).unwrap(), v0);
    for t in 0..=5 {
        for kind in ["v", "phi", "detjac"] {
            assert!(out_dir.join(format!("{kind}_{t:03}.gfld")).is_file());
        }
    }
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["subcommand"], "shoot");
    assert_eq!(echo["config"]["shooting"]["steps"], 5);
}

#[test]
fn register_writes_velocity_trajectory_and_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = geoflow(&["make-data", "--family", "circles", "--n", "1", "--dims", "16", "--seed", "3", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let src = dir.path().join(manifest["entries"][0]["source"].as_str().unwrap());
    let tgt = dir.path().join(manifest["entries"][0]["target"].as_str().unwrap());
    let out_dir = dir.path().join("reg");
    let out = geoflow(&["register", "--source", s(&src), "--target", s(&tgt), "--iters", "5", "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out_dir.join("v0.gfld").is_file());
    assert!(out_dir.join("phi_010.gfld").is_file());
    let rows = csv_rows(&out_dir.join("energy.csv"));
    assert_eq!(rows[0], ["iter", "regularity", "matching", "energy"]);
    let energies: Vec<f64> = rows[1..].iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(read_scalar(&out_dir.join("deformed.gfld")).unwrap().grid(), &Grid::square(16).unwrap());

    let out = geoflow(&["register", "--source", s(&src), "--target", s(&tgt), "--lambda", "-1", "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_smoke_produces_every_declared_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let ok = |args: &[&str]| {
        let out = geoflow(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", stderr(&out));
    };

    ok(&["make-data", "--family", "circles,blob", "--n", "8", "--dims", "16", "--seed", "7", "--out", s(&data)]);
    let manifest = data.join("manifest.json");
    ok(&["train", "--data", s(&manifest), "--epochs", "2", "--seed", "1", "--batch", "2", "--out", s(&run)]);
    let loss = csv_rows(&run.join("loss.csv"));
    assert_eq!(loss[0], ["epoch", "match", "reg", "geodesic", "total"]);
    assert_eq!(loss.len(), 3);
    assert!(run.join("best.gckp").is_file() && run.join("last.gckp").is_file());
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["config"]["train"]["epochs"], 2);
    assert_eq!(echo["config"]["model"]["dims"], serde_json::json!([16, 16]));

    let ckpt = run.join("best.gckp");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    let pred = dir.path().join("pred");
    let src = data.join(m["entries"][0]["source"].as_str().unwrap());
    let tgt = data.join(m["entries"][0]["target"].as_str().unwrap());
    ok(&["predict", "--checkpoint", s(&ckpt), "--source", s(&src), "--target", s(&tgt), "--out-dir", s(&pred)]);
    assert!(pred.join("v_010.gfld").is_file() && pred.join("deformed.pgm").is_file());
    assert_eq!(csv_rows(&pred.join("detjac.csv")).len(), 2);

    let eval = dir.path().join("eval");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&manifest), "--split", "test", "--out-dir", s(&eval)]);
    let n_test = m["entries"].as_array().unwrap().iter().filter(|e| e["split"] == "test").count();
    let metrics = csv_rows(&eval.join("metrics.csv"));
    assert_eq!(metrics[0], ["case", "structure", "dice", "hd"]);
    assert_eq!(metrics.len(), 1 + n_test);
    for r in &metrics[1..] {
        let d: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&d));
    }
    let detjac = csv_rows(&eval.join("detjac.csv"));
    assert_eq!(detjac[0], ["case", "min", "max", "mean", "neg_count"]);
    assert_eq!(detjac.len(), 1 + n_test);
    let traj = csv_rows(&eval.join("trajectory_mse.csv"));
    assert_eq!(traj.len(), 1 + 11);
    assert_eq!(traj[1][3].parse::<f64>().unwrap(), 0.0);

    let bench = dir.path().join("bench");
    ok(&["bench", "--checkpoint", s(&ckpt), "--dims", "16,32", "--reps", "2", "--out-dir", s(&bench)]);
    let rows = csv_rows(&bench.join("bench.csv"));
    assert_eq!(rows[0], ["dims", "t_predict", "t_shoot", "ratio"]);
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let v: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[3] - v[1] / v[2]).abs() <= 1e-12 * v[3].abs());
    }

    let bad = dir.path().join("bad.gckp");
    write_scalar(&bad, &read_scalar(&src).unwrap()).unwrap();
    let out = geoflow(&["eval", "--checkpoint", s(&bad), "--data", s(&manifest), "--out-dir", s(&eval)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--checkpoint"));
}
