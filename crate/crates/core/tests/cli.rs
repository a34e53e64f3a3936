use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_denoise-fet"));
    cmd.current_dir(dir);
    for (key, _) in std::env::vars() {
        if key.starts_with("DENOISE_FET_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, out: &str) {
    ok(
        dir,
        &[
            "--out",
            out,
            "--seed",
            "1",
            "synth",
            "--samples",
            "200",
            "--types",
            "6",
            "--dim",
            "5",
            "--dev-samples",
            "80",
        ],
    );
}

fn inject(dir: &Path, data: &str, out: &str) {
    ok(
        dir,
        &[
            "--out",
            out,
            "--seed",
            "7",
            "inject",
            "--input",
            &format!("{data}/train.jsonl"),
            "--vocab",
            &format!("{data}/vocab.txt"),
            "--fn",
            "0.15",
            "--fp",
            "0.05",
        ],
    );
}

fn run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn denoise_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "--out",
        out,
        "denoise",
        "--train",
        "noise/noisy.jsonl",
        "--dev",
        "data/dev.jsonl",
        "--vocab",
        "data/vocab.txt",
        "--max-epochs",
        "5",
        "--eval-every",
        "20",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn version_reports_config_schema() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["--version"]);
    assert!(stdout.contains("config schema 1"), "{stdout}");
}

#[test]
fn synth_writes_identical_files_on_repeat() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a");
    synth(dir.path(), "b");
    for name in [
        "vocab.txt",
        "train.jsonl",
        "ground_truth.jsonl",
        "dev.jsonl",
    ] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn synth_rejects_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["synth", "--samples", "0", "--types", "3", "--dim", "2"],
    );
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!dir.path().join("train.jsonl").exists());
}

#[test]
fn inject_validates_rates() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data");
    let out = run(
        dir.path(),
        &[
            "inject",
            "--input",
            "data/train.jsonl",
            "--vocab",
            "data/vocab.txt",
            "--fn",
            "1.5",
        ],
    );
    assert!(!out.status.success());
}

#[test]
fn inject_with_zero_rates_keeps_labels() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data");
    ok(
        dir.path(),
        &[
            "--out",
            "noise",
            "inject",
            "--input",
            "data/train.jsonl",
            "--vocab",
            "data/vocab.txt",
            "--fn",
            "0",
            "--fp",
            "0",
        ],
    );
    let before = fs::read_to_string(dir.path().join("data/train.jsonl")).unwrap();
    let after = fs::read_to_string(dir.path().join("noise/noisy.jsonl")).unwrap();
    assert_eq!(before, after);
    let flips = fs::read_to_string(dir.path().join("noise/flips.csv")).unwrap();
    assert_eq!(flips.lines().count(), 1);
}

#[test]
fn denoise_writes_artifacts_and_echoes_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data");
    inject(dir.path(), "data", "noise");
    let args = denoise_args(
        "runs",
        &[
            "--epsilon",
            "0.1",
            "--alpha",
            "2.0",
            "--beta",
            "0.5",
            "--k",
            "2000",
        ],
    );
    let stdout = ok(dir.path(), &args);
    assert!(stdout.contains("flagged cells"), "{stdout}");
    let run = run_dir(&dir.path().join("runs"));
    for name in [
        "denoised.jsonl",
        "mask.csv",
        "report.json",
        "model.json",
        "gaussians.json",
        "pretrain_logits.csv",
        "timings.json",
    ] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    assert!(!run.join("INCOMPLETE").exists());
    let report: Value =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["selection"]["epsilon"], 0.1);
    assert_eq!(report["config"]["selection"]["alpha"], 2.0);
    assert_eq!(report["config"]["train"]["beta"], 0.5);
    assert_eq!(report["config"]["train"]["finetune_steps"], 2000);
    let mask = fs::read_to_string(run.join("mask.csv")).unwrap();
    assert!(mask.starts_with("sample_id,type,original_annotation,posterior"));
}

#[test]
fn denoise_reads_config_file_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data");
    inject(dir.path(), "data", "noise");
    let config = serde_json::json!({
        "pipeline": { "selection": { "epsilon": 0.2 }, "train": { "finetune_steps": 50, "max_epochs": 4 } },
        "paths": { "train": "noise/noisy.jsonl", "dev": "data/dev.jsonl", "vocab": "data/vocab.txt" },
        "out": "runs"
    });
    fs::write(dir.path().join("run.json"), config.to_string()).unwrap();
    ok(
        dir.path(),
        &["--config", "run.json", "denoise", "--k", "30"],
    );
    let run = run_dir(&dir.path().join("runs"));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["selection"]["epsilon"], 0.2);
    assert_eq!(report["config"]["train"]["finetune_steps"], 30);
    assert_eq!(report["config"]["train"]["max_epochs"], 4);
}

#[test]
fn denoise_without_dev_set_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data");
    let out = run(
        dir.path(),
        &[
            "--out",
            "runs",
            "denoise",
            "--train",
            "data/train.jsonl",
            "--dev",
            "data/missing.jsonl",
            "--vocab",
            "data/vocab.txt",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dev dataset"), "{stderr}");
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn evaluate_identical_files_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data");
    let stdout = ok(
        dir.path(),
        &[
            "evaluate",
            "--pred",
            "data/train.jsonl",
            "--gold",
            "data/ground_truth.jsonl",
            "--vocab",
            "data/vocab.txt",
            "--json",
            "scores.json",
        ],
    );
    assert!(stdout.contains("macro F1"), "{stdout}");
    let scores: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("scores.json")).unwrap()).unwrap();
    for key in [
        "macro_precision",
        "macro_recall",
        "macro_f1",
        "micro_precision",
        "micro_recall",
        "micro_f1",
        "strict_accuracy",
    ] {
        assert_eq!(scores[key], 1.0, "{key}");
    }
}

#[test]
fn evaluate_mask_against_flip_log() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data");
    inject(dir.path(), "data", "noise");
    // The flip log scored against itself is a perfect mask.
    let flips = fs::read_to_string(dir.path().join("noise/flips.csv")).unwrap();
    let mask: String = std::iter::once("sample_id,type,original_annotation,posterior".to_string())
        .chain(flips.lines().skip(1).map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{},{},0.5", f[0], f[1], f[3])
        }))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(dir.path().join("mask.csv"), mask + "\n").unwrap();
    ok(
        dir.path(),
        &[
            "evaluate",
            "--mask",
            "mask.csv",
            "--flips",
            "noise/flips.csv",
            "--json",
            "det.json",
        ],
    );
    let scores: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("det.json")).unwrap()).unwrap();
    assert_eq!(scores["detection_precision"], 1.0);
    assert_eq!(scores["detection_recall"], 1.0);
    assert_eq!(scores["detection_f1"], 1.0);
}

#[test]
fn evaluate_names_first_mismatched_id() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data");
    let gold = fs::read_to_string(dir.path().join("data/ground_truth.jsonl")).unwrap();
    fs::write(
        dir.path().join("pred.jsonl"),
        gold.replacen("s000003", "zz", 1),
    )
    .unwrap();
    let out = run(
        dir.path(),
        &[
            "evaluate",
            "--pred",
            "pred.jsonl",
            "--gold",
            "data/ground_truth.jsonl",
            "--vocab",
            "data/vocab.txt",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("s000003"), "{stderr}");
}
