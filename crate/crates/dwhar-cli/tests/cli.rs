//! Black-box tests of the `dwhar` binary: artifact layout, determinism,
//! config-echo replay, ablation flags, exit codes, and split handling.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dwhar")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "dwhar {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Tiny dataset: 3 classes x 2 subjects x 6 windows, 2 sensors x 2 variables.
fn synth_tiny(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--classes",
        "3",
        "--subjects",
        "2",
        "--windows-per-class",
        "6",
        "--sensors",
        "2",
        "--vars",
        "2",
    ]);
    data.join("manifest.toml")
}

fn train_tiny(manifest: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "2",
        "--d-embed",
        "8",
        "--seed",
        "3",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_is_deterministic_in_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, seed) in [(&a, "0"), (&b, "0"), (&c, "1")] {
        run_ok(&[
            "synth", "--out", out.to_str().unwrap(), "--classes", "2", "--subjects", "2",
            "--windows-per-class", "3", "--sensors", "2", "--vars", "2", "--seed", seed,
        ]);
    }
    for file in ["manifest.toml", "subject_0.csv", "subject_1.csv"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file} differs across same-seed runs");
    }
    assert_ne!(read(&a.join("subject_0.csv")), read(&c.join("subject_0.csv")));
}

#[test]
fn echoed_config_replays_the_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(dir.path());
    let first = dir.path().join("first");
    train_tiny(&manifest, &first, &[]);

    // the echoed config alone must reproduce the run: no other flags
    let replay = dir.path().join("replay");
    run_ok(&[
        "train",
        "--config",
        first.join("config.toml").to_str().unwrap(),
        "--out",
        replay.to_str().unwrap(),
    ]);
    for file in ["train_log.jsonl", "metrics.json", "model.bin"] {
        assert_eq!(read(&first.join(file)), read(&replay.join(file)), "{file} differs on replay");
    }
}

#[test]
fn eval_leaves_the_model_untouched_and_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(dir.path());
    let train_dir = dir.path().join("run");
    train_tiny(&manifest, &train_dir, &[]);
    let model_before = read(&train_dir.join("model.bin"));

    let eval = |out: &Path, workers: &str| {
        run_ok(&[
            "eval",
            "--model-dir",
            train_dir.to_str().unwrap(),
            "--data",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--workers",
            workers,
        ]);
    };
    let (w1, w2) = (dir.path().join("w1"), dir.path().join("w2"));
    eval(&w1, "1");
    eval(&w2, "2");

    assert_eq!(model_before, read(&train_dir.join("model.bin")), "eval must not rewrite the model");
    assert_eq!(
        read(&w1.join("metrics.json")),
        read(&w2.join("metrics.json")),
        "metrics must not depend on the worker count"
    );
}

#[test]
fn export_attention_needs_a_model_with_the_attention_stage() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(dir.path());
    let no_csi = dir.path().join("no_csi");
    train_tiny(&manifest, &no_csi, &["--no-csi"]);

    let out = run(&[
        "export-attention",
        "--model-dir",
        no_csi.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("exp").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "expected a usage error");
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("attention"),
        "stderr should name the missing stage"
    );
}

#[test]
fn export_attention_writes_row_stochastic_weights() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(dir.path());
    let run_dir = dir.path().join("run");
    train_tiny(&manifest, &run_dir, &[]);

    let exp = dir.path().join("exp");
    run_ok(&[
        "export-attention",
        "--model-dir",
        run_dir.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        exp.to_str().unwrap(),
        "--limit",
        "4",
    ]);
    let csv = String::from_utf8(read(&exp.join("attention.csv"))).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let weights: f64 = fields[fields.len() - 2..].iter() // 2 sensors: last two columns
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert!((weights - 1.0).abs() < 1e-9, "row does not sum to 1: {line}");
        rows += 1;
    }
    assert!(rows > 0, "no attention rows exported");
}

#[test]
fn exit_codes_distinguish_usage_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(dir.path());

    // unknown flag: usage error
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // invalid model shape: config error
    let out = run(&[
        "train", "--data", manifest.to_str().unwrap(), "--out",
        dir.path().join("bad").to_str().unwrap(), "--epochs", "1", "--d-embed", "7",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // corrupt CSV: data error
    std::fs::write(dir.path().join("data/subject_0.csv"), "not,a,number\nfoo,bar,baz\n").unwrap();
    let out = run(&[
        "train", "--data", manifest.to_str().unwrap(), "--out",
        dir.path().join("bad2").to_str().unwrap(), "--epochs", "1",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn loso_training_yields_one_fold_per_subject() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_tiny(dir.path());
    let out = dir.path().join("loso");
    train_tiny(&manifest, &out, &["--split", "loso"]);

    let doc: serde_json::Value =
        serde_json::from_slice(&read(&out.join("metrics.json"))).unwrap();
    let runs = doc["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2, "one run per held-out subject");
    let folds: Vec<&str> = runs.iter().map(|r| r["fold"].as_str().unwrap()).collect();
    assert!(folds.contains(&"loso-subject_0") && folds.contains(&"loso-subject_1"), "{folds:?}");
    assert_eq!(doc["aggregate"]["runs"], 2);
}

#[test]
fn out_root_env_var_supplies_the_default_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args([
            "synth", "--classes", "2", "--subjects", "1", "--windows-per-class", "2",
            "--sensors", "1", "--vars", "1",
        ])
        .env("DWHAR_OUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("synth/manifest.toml").is_file());
}
