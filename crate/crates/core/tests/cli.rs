use std::path::Path;
use std::process::{Command, Output};

use bfmlab::checkpoint::Checkpoint;
use bfmlab::dataset::{DatasetFile, Split};

fn bfmlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfmlab"))
        .args(["--quiet", "--threads", "1", "--out-dir"])
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let mut args = vec!["simulate", "--n-samples", "10", "--seed", "3"];
    args.extend_from_slice(extra);
    ok(&bfmlab(dir, &args));
    let g = extra.iter().position(|a| *a == "--group-size").map_or("242", |i| extra[i + 1]);
    dir.join(format!("dataset_g{g}.bfmc"))
}

#[test]
fn simulate_writes_requested_count_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), &[]);
    let data = DatasetFile::load(&path).unwrap();
    assert_eq!(data.manifest.n_samples, 10);
    assert_eq!(data.n_items(), 10);
    let first = std::fs::read(&path).unwrap();
    simulate(dir.path(), &[]);
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let path = simulate(dir.path(), &["--group-size", "121"]);
    assert_eq!(DatasetFile::load(&path).unwrap().n_items(), 20);
}

#[test]
fn seed_environment_variable_is_ignored() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = simulate(a.path(), &[]);
    let out = Command::new(env!("CARGO_BIN_EXE_bfmlab"))
        .env("BFMLAB_SEED", "77")
        .args(["--quiet", "--out-dir"])
        .arg(b.path())
        .args(["simulate", "--n-samples", "10", "--seed", "3"])
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(b.path().join("dataset_g242.bfmc")).unwrap());
}

#[test]
fn train_variants_and_epoch_limit() {
    let dir = tempfile::tempdir().unwrap();
    let ds = simulate(dir.path(), &[]);
    let ds = ds.to_str().unwrap();
    for variant in ["cnn", "cnn-convlstm"] {
        let out = bfmlab(dir.path(), &["train", "--dataset", ds, "--variant", variant, "--max-epochs", "1", "--base-channels", "2"]);
        ok(&out);
    }
    let cnn = Checkpoint::<f32>::load(&dir.path().join("model_cnn_g242.bfmw")).unwrap();
    let lstm = Checkpoint::<f32>::load(&dir.path().join("model_cnn-convlstm_g242.bfmw")).unwrap();
    assert_ne!(cnn.spec, lstm.spec);
    assert!(lstm.weights.params.len() > cnn.weights.params.len());
    let record = std::fs::read_to_string(dir.path().join("train_cnn_g242.csv")).unwrap();
    assert_eq!(record.lines().count(), 2);
    assert!(record.starts_with("epoch,train_loss,val_loss,seconds\n1,"));
}

#[test]
fn missing_and_corrupt_artifacts_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = bfmlab(dir.path(), &["train", "--dataset", "/nonexistent/data.bfmc"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.bfmc"));

    let ds = simulate(dir.path(), &[]);
    let mut bytes = std::fs::read(&ds).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0x10;
    let bad = dir.path().join("bad.bfmc");
    std::fs::write(&bad, &bytes).unwrap();
    let out = bfmlab(dir.path(), &["train", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let junk = dir.path().join("junk.bfmw");
    std::fs::write(&junk, b"BFMW\x01\x00\x00\x00garbage").unwrap();
    let out = bfmlab(dir.path(), &["eval", "--dataset", ds.to_str().unwrap(), "--checkpoint", junk.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let junk_json = dir.path().join("junk.json");
    std::fs::write(&junk_json, b"{\"nope\": 1}").unwrap();
    let out = bfmlab(dir.path(), &["report", junk_json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = bfmlab(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bfmlab(dir.path(), &["simulate", "--n-samples", "10", "--group-size", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bfmlab(dir.path(), &["sweep", "--groups", "1,7"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bfmlab(dir.path(), &["--preset", "huge", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&bfmlab(dir.path(), &["validate-profile", "flat1"]));
    assert!(out.contains("1 taps"));
    let file = dir.path().join("two.tsv");
    std::fs::write(&file, "# two taps\n0\t0\n10\t-3\n").unwrap();
    let out = ok(&bfmlab(dir.path(), &["validate-profile", file.to_str().unwrap()]));
    assert!(out.contains("2 taps"));
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "0\t0\n0\t-3\n").unwrap();
    assert_eq!(bfmlab(dir.path(), &["validate-profile", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(bfmlab(dir.path(), &["validate-profile", "no-such-profile"]).status.code(), Some(2));
}

#[test]
fn zero_model_eval_matches_hand_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let ds = simulate(dir.path(), &[]);
    let out = ok(&bfmlab(dir.path(), &["eval", "--dataset", ds.to_str().unwrap(), "--zero-model", "--split", "train"]));
    let data = DatasetFile::load(&ds).unwrap();
    let s = data.manifest.scale;
    let items: Vec<usize> = data.split_items(Split::Train).collect();
    let mut per_sample = Vec::new();
    for &i in &items {
        let smp = data.sample(i);
        let mut total = 0.0;
        for f in 0..242 {
            let sq: f64 = (0..4).map(|a| (smp.label[f * 4 + a] as f64 * s).powi(2)).sum();
            total += sq.sqrt();
        }
        per_sample.push(total / 242.0);
    }
    let oracle = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("eval_cnn_g242.json")).unwrap()).unwrap();
    let mean = report["mean"].as_f64().unwrap();
    assert!((mean - oracle).abs() < 1e-12, "{mean} vs {oracle}");
    assert!(out.contains("mean frobenius error"));
    let errors = std::fs::read_to_string(dir.path().join("report_errors_cnn_242.csv")).unwrap();
    assert_eq!(errors.lines().count(), items.len() + 1);
}

#[test]
fn pipeline_outputs_are_deterministic_in_f64_mode() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let common = ["--precision", "f64", "--deterministic", "--seed", "5", "--base-channels", "2", "--max-epochs", "2"];
        let mut a = common.to_vec();
        a.extend(["simulate", "--n-samples", "10"]);
        ok(&bfmlab(dir.path(), &a));
        let ds = dir.path().join("dataset_g242.bfmc");
        let mut a = common.to_vec();
        a.extend(["train", "--dataset", ds.to_str().unwrap()]);
        ok(&bfmlab(dir.path(), &a));
        let ck = dir.path().join("model_cnn_g242.bfmw");
        let mut a = common.to_vec();
        a.extend(["eval", "--dataset", ds.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]);
        ok(&bfmlab(dir.path(), &a));
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        (dir, files)
    };
    let (_a, first) = run();
    let (_b, second) = run();
    assert_eq!(first.len(), second.len());
    for (x, y) in first.iter().zip(&second) {
        assert_eq!(x.0, y.0);
        assert!(x.1 == y.1, "{} differs between runs", x.0);
    }
    assert!(first.iter().any(|f| f.0 == "report_errors_cnn_242.csv"));
}

#[test]
fn default_sweep_has_six_rows_and_report_rerenders_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&bfmlab(
        dir.path(),
        &["sweep", "--n-samples", "10", "--max-epochs", "1", "--base-channels", "2", "--deterministic", "--precision", "f64"],
    ));
    assert_eq!(out.lines().filter(|l| l.starts_with("g = ")).count(), 6);
    let csv = std::fs::read_to_string(dir.path().join("report_sweep_cnn_all.csv")).unwrap();
    let groups: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(groups, ["1", "2", "11", "22", "121", "242"]);
    assert!(csv.lines().nth(1).unwrap().contains("subcarrier-individual"));

    let again = tempfile::tempdir().unwrap();
    let json = dir.path().join("sweep_cnn.json");
    ok(&bfmlab(again.path(), &["report", json.to_str().unwrap()]));
    ok(&bfmlab(again.path(), &["report", json.to_str().unwrap()]));
    for name in ["report_sweep_cnn_all.csv", "report_sweep_cnn_all.svg"] {
        assert_eq!(std::fs::read(dir.path().join(name)).unwrap(), std::fs::read(again.path().join(name)).unwrap());
    }
}
