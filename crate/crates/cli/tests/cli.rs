use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const BIN: &str = env!("CARGO_BIN_EXE_onsetnet");

/// Small synthetic dataset: nine subjects, one 6 s video each.
const SYNTH: &[&str] = &[
    "--set",
    "synth.videos_per_subject=1",
    "--set",
    "synth.duration_sec=6",
    "--set",
    "synth.width=48",
    "--set",
    "synth.height=40",
    "--set",
    "synth.roi_size=12",
];

/// Tiny model and two batches per epoch.
const TINY: &[&str] = &[
    "--set",
    "model.roi_height=8",
    "--set",
    "model.roi_width=8",
    "--set",
    "model.conv_channels=2,2,2,2,2",
    "--set",
    "model.fc1_width=4",
    "--set",
    "model.fc2_width=4",
    "--set",
    "data.da_factor=1",
    "--set",
    "data.crop_margin=2",
    "--set",
    "data.max_jitter=1",
    "--set",
    "train.batches_per_epoch=2",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&p);
    p
}

fn dataset() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tmp("dataset");
        let mut args = vec!["synth", "--seed", "3", "--out", dir.to_str().unwrap()];
        args.extend_from_slice(SYNTH);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        dir
    })
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        dataset().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "5",
        "--split",
        "0",
        "--max-epochs",
        "2",
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn help_lists_every_key_with_default_and_exit_codes() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for (key, _) in onsetnet::config::KEY_HELP {
        assert!(text.contains(key), "missing {key}");
    }
    assert!(text.contains("train.base_lr") && text.contains("[0.001]"));
    assert!(text.contains("eval.tolerance") && text.contains("[0.05]"));
    assert!(text.contains("ONSETNET_THREADS"));
    assert!(text.contains("7  gradient check"));
}

#[test]
fn gradcheck_ops_pass_and_list_each_op_once() {
    let o = run(&["gradcheck", "--scope", "ops"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    for op in ["conv3d", "maxpool2d", "relu", "batchnorm", "dropout", "linear", "concat", "weighted_soft_xent"] {
        let lines = text.lines().filter(|l| l.split_whitespace().next() == Some(op)).count();
        assert_eq!(lines, 1, "{op} in\n{text}");
    }
}

#[test]
fn injected_fault_fails_with_gradcheck_code() {
    let o = run(&["gradcheck", "--scope", "ops", "--inject-fault", "batchnorm"]);
    assert_eq!(o.status.code(), Some(7), "{}", stdout(&o));
    assert!(stderr(&o).contains("batchnorm"));
    let o = run(&["gradcheck", "--scope", "ops", "--inject-fault", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_summary_and_reproducible_digest() {
    let dir = tmp("synth-again");
    let mut args = vec!["synth", "--seed", "3", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SYNTH);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("subjects: 9") && text.contains("videos: 9"), "{text}");
    assert!(text.contains("onset density"));
    let digest = |dir: &Path| {
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("synth_manifest.json")).unwrap()).unwrap();
        m["inputs"][0]["sha256"].as_str().unwrap().to_string()
    };
    assert_eq!(digest(&dir), digest(dataset()));
    assert_eq!(digest(&dir).len(), 64);
}

#[test]
fn synth_into_a_file_path_fails() {
    let dir = tmp("occupied");
    std::fs::create_dir_all(dir.parent().unwrap()).unwrap();
    std::fs::write(&dir, "not a directory").unwrap();
    let o = run(&["synth", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("error:"));
    std::fs::remove_file(&dir).unwrap();
}

#[test]
fn splits_prints_nine_plans() {
    let o = run(&["splits", "--data", dataset().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("split ")).count(), 9);
    assert!(text.contains("split 0: test subject01, validation subject02"));
}

#[test]
fn missing_manifest_is_a_config_error() {
    let out = tmp("missing");
    let o = run(&["train", "--data", "/definitely/not/here.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&["train", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let o = Command::new(BIN).args(["splits"]).env("ONSETNET_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_round_trip() {
    let a = tmp("train-a");
    let b = tmp("train-b");
    // 2 epochs of 50 batches
    for dir in [&a, &b] {
        let o = train(dir, &["--set", "train.batches_per_epoch=50"]);
        assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("epoch   0"));
    }
    for f in ["epoch_000.ckpt", "epoch_001.ckpt", "best.ckpt", "history.csv", "train_manifest.json", "train_config.conf"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let history = std::fs::read(a.join("history.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&history).lines().count(), 3);
    assert_eq!(history, std::fs::read(b.join("history.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("best.ckpt")).unwrap(), std::fs::read(b.join("best.ckpt")).unwrap());

    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("train_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["model.fc1_width"], "4");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    // the config snapshot reproduces the run
    let c = tmp("train-c");
    let snapshot = a.join("train_config.conf");
    let o = run(&["train", "--config", snapshot.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(history, std::fs::read(c.join("history.csv")).unwrap());

    let o = run(&[
        "eval",
        "--data",
        dataset().to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--config",
        snapshot.to_str().unwrap(),
        "--reference",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("at 50 ms tolerance"));
    assert!(text.contains("subject01 (micro)"));
    for row in ["23.5", "82.1", "93.2", "25.7"] {
        assert!(text.contains(row), "{row} in\n{text}");
    }
    assert!(a.join("predictions.csv").is_file() && a.join("report.csv").is_file() && a.join("report.txt").is_file());
    let csv = std::fs::read_to_string(a.join("report.csv")).unwrap();
    assert!(csv.contains("published reference: visual-based 3D CNN,average,,,,,,0.257"), "{csv}");
}

#[test]
fn ground_truth_predictions_score_one() {
    let ds = dataset();
    let onsets = std::fs::read_to_string(ds.join("subject04_v1").join("onsets.csv")).unwrap();
    let mut csv = String::from("video_id,onset_sec\n");
    for line in onsets.lines().skip(1) {
        let t = line.split(',').next_back().unwrap();
        csv.push_str(&format!("subject04_v1,{t}\n"));
    }
    let out = tmp("truth");
    std::fs::create_dir_all(&out).unwrap();
    let preds = out.join("truth.csv");
    std::fs::write(&preds, csv).unwrap();
    let o = run(&[
        "eval",
        "--data",
        ds.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--subject",
        "subject04",
        "--predictions",
        preds.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let total = report.lines().find(|l| l.contains("subject04 (micro)")).unwrap();
    assert!(total.ends_with(",1"), "{total}");
}

#[test]
fn version_mismatch_has_checkpoint_code() {
    let out = tmp("version");
    let o = train(&out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut bytes = std::fs::read(out.join("best.ckpt")).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    let bad = out.join("future.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let o = run(&[
        "eval",
        "--data",
        dataset().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--checkpoint",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stderr(&o).contains("version 99"), "{}", stderr(&o));
}

#[test]
fn baseline_is_deterministic_and_reports_spread() {
    let out = tmp("baseline");
    let args = [
        "baseline",
        "--data",
        dataset().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--subject",
        "subject02",
        "--trials",
        "200",
    ];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let csv = std::fs::read_to_string(out.join("baseline.csv")).unwrap();
    assert!(csv.starts_with("video_id,onsets,duration_sec,trials,f\nsubject02_v1,"));
    assert_eq!(stdout(&first), stdout(&run(&args)));
    let text = stdout(&first);
    let spread = text.lines().find(|l| l.starts_with("seed spread")).unwrap();
    let stds: Vec<f64> = spread
        .split("std ")
        .skip(1)
        .map(|s| s.split(|c: char| c == ';' || c.is_whitespace()).next().unwrap().parse().unwrap())
        .collect();
    assert!(stds[1] < stds[0], "{spread}");
}
