use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tchain::decompose::gaussian_model;
use tchain::io::{load_model, save_tensor};

fn tc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tc")).args(args).output().expect("run tc")
}

fn ok(args: &[&str]) -> String {
    let out = tc(args);
    assert!(out.status.success(), "tc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_planted(dir: &Path, dims: &[usize], bonds: &[usize]) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = gaussian_model(dims, bonds, &mut rng).unwrap().reconstruct();
    let path = dir.join("y.tct");
    save_tensor(&path, &y).unwrap();
    path
}

#[test]
fn decompose_then_correct() {
    let dir = tempfile::tempdir().unwrap();
    let y = write_planted(dir.path(), &[5, 5, 5], &[2, 2, 2]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"fit": {"max_iters": 400}}"#).unwrap();
    let (run, model) = (dir.path().join("run.json"), dir.path().join("m.tcm"));
    ok(&["decompose", s(&y), "--bonds", "2,2,2", "--solver", "als", "--config", s(&cfg), "--out", s(&run), "--model-out", s(&model)]);
    let v = json(&run);
    for key in ["final_error", "full_error", "sensitivity", "intensity", "report"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(load_model(&model).unwrap().bond_dims(), vec![2, 2, 2]);

    let (fixed, rep) = (dir.path().join("c.tcm"), dir.path().join("c.json"));
    ok(&["correct", s(&y), s(&model), "--delta", "1e-3", "--out", s(&fixed), "--report", s(&rep)]);
    let after = json(&rep);
    assert!(after["final_error"].as_f64().unwrap() <= 1e-3 * (1.0 + 1e-8));
    assert!(after["sensitivity"].as_f64().unwrap() <= v["sensitivity"].as_f64().unwrap() * (1.0 + 1e-9));
    ok(&["correct", s(&y), s(&fixed), "--penalty", "intensity", "--out", s(&fixed)]);
}

#[test]
fn nan_entries_need_a_masked_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut y = gaussian_model(&[4, 4, 4], &[2, 2, 2], &mut rng).unwrap().reconstruct();
    y.data_mut()[5] = f64::NAN;
    let path = dir.path().join("y.tct");
    save_tensor(&path, &y).unwrap();
    let run = dir.path().join("run.json");
    assert!(!tc(&["decompose", s(&path), "--bonds", "2,2,2", "--out", s(&run)]).status.success());

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"fit": {"max_iters": 50, "masked": true}}"#).unwrap();
    ok(&["decompose", s(&path), "--bonds", "2,2,2", "--config", s(&cfg), "--out", s(&run)]);
    let v = json(&run);
    assert!(v["final_error"].as_f64().unwrap().is_finite());
    assert!(v.get("full_error").is_none());
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let y = write_planted(dir.path(), &[4, 4, 4], &[1, 1, 1]);
    let run = dir.path().join("run.json");
    assert!(!tc(&["decompose", s(&y), "--bonds", "2,2", "--out", s(&run)]).status.success());
    assert!(!tc(&["decompose", "/nonexistent", "--bonds", "2,2,2", "--out", s(&run)]).status.success());
    assert!(!tc(&["conv", s(&y), "--grid", "1:1"]).status.success());
}

#[test]
fn conv_prints_sorted_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k3 = gaussian_model(&[4, 3, 9], &[1, 2, 2], &mut rng).unwrap().reconstruct();
    let k = tchain::conv::order3_to_kernel(&k3, 1, 1).unwrap();
    let path = dir.path().join("k.tct");
    save_tensor(&path, &k.weights).unwrap();
    std::fs::write(dir.path().join("k.tct.json"), r#"{"stride": 2, "padding": 1}"#).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"fit": {"max_iters": 30}}"#).unwrap();
    let text = ok(&["conv", s(&path), "--grid", "1,2:1,2:1", "--config", s(&cfg)]);
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap(), vec!["R1", "R2", "R3", "rel_err", "flops", "params"]);
    let errs: Vec<f64> = rows.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(errs.len(), 4);
    assert!(errs.windows(2).all(|w| w[0] <= w[1]));

    let out = tc(&["conv", s(&path), "--grid", "2:2:2", "--flops-budget", "1", "--config", s(&cfg)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no feasible ranks"));
}

#[test]
fn image_and_bench_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let img = tchain::DenseTensor::from_fn(vec![6, 5, 3], |i| ((i[0] * 7 + i[1] * 3 + i[2]) % 11) as f64 / 10.0).unwrap();
    let ppm = dir.path().join("x.ppm");
    let mut f = std::fs::File::create(&ppm).unwrap();
    tchain_bench::image::write_ppm(&mut f, &img).unwrap();
    drop(f);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"fit": {"max_iters": 20}}"#).unwrap();
    let csv_out = dir.path().join("img.csv");
    let out = tc(&["image", s(&ppm), "--grid", "1,2:1,40", "--config", s(&cfg), "--out", s(&csv_out)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped"));
    let text = std::fs::read_to_string(&csv_out).unwrap();
    assert_eq!(text.lines().count(), 3);

    let suite = dir.path().join("suite.json");
    std::fs::write(
        &suite,
        r#"{"name": "tiny", "dump_trajectories": true, "experiments": [
            {"name": "g", "family": "synthetic", "dims": [4, 4, 4], "bonds": [2, 2, 2],
             "n_instances": 2, "n_inits": 1, "solver": "als", "fit": {"max_iters": 30}, "seed": 1}]}"#,
    )
    .unwrap();
    let res = dir.path().join("res");
    ok(&["bench", s(&suite), "--out", s(&res)]);
    assert_eq!(std::fs::read_to_string(res.join("g.csv")).unwrap().lines().count(), 3);
    assert!(res.join("trajectories").join("g_1_0.csv").exists());
    let summary = json(&res.join("summary.json"));
    assert_eq!(summary[0]["name"], "g");
}
