use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hpinn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpinn")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
[model]
d_model = 8
ffn_width = 16
nfnn_width = 4

[train]
epochs = 2
batch_size = 64
";

/// Raw small synthetic FD001 files plus a tiny config in a temp dir.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = hpinn(&["generate-synthetic", "--out", "raw", "--small", "--seed", "4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn full_workflow() {
    let dir = workspace();
    let p = dir.path();
    let o = hpinn(&["prepare", "--data-dir", "raw", "--subset", "FD001", "--out", "fd001.csv"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("\"window\": 40"));

    let o = hpinn(&["train", "--config", "tiny.toml", "--dataset", "fd001.csv", "--seed", "7", "--out", "t1"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("batch_size = 64"), "{text}");
    assert!(text.contains("lr_decay_epoch = 50"), "{text}");
    assert!(p.join("t1/checkpoint.bin").is_file());
    assert_eq!(fs::read_to_string(p.join("t1/history.jsonl")).unwrap().lines().count(), 2);

    let o = hpinn(&["train", "--config", "tiny.toml", "--dataset", "fd001.csv", "--seed", "7", "--out", "t2"], p);
    assert!(o.status.success());
    assert_eq!(fs::read(p.join("t1/checkpoint.bin")).unwrap(), fs::read(p.join("t2/checkpoint.bin")).unwrap());

    let o = hpinn(
        &["evaluate", "--checkpoints", "t1/checkpoint.bin", "t2/checkpoint.bin", "--data-dir", "raw", "--out", "eval"],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean over 2 trial(s)"));
    assert!(fs::read_to_string(p.join("eval/per_unit.csv")).unwrap().starts_with("unit,true_rul,pred_rul_1,pred_rul_2\n"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["std_rmse"], 0.0);

    let o = hpinn(&["export-hidden", "--checkpoint", "t1/checkpoint.bin", "--dataset", "fd001.csv", "--split", "train-all"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    assert!(csv.starts_with("unit,end_cycle,h1,h2,h3,true_rul,pred_rul\n"));
    let o = hpinn(&["export-hidden", "--checkpoint", "t1/checkpoint.bin", "--dataset", "fd001.csv", "--out", "h.csv"], p);
    assert!(o.status.success());
    // header plus one row per test unit of the small fleet
    assert_eq!(fs::read_to_string(p.join("h.csv")).unwrap().lines().count(), 1 + 8);
}

#[test]
fn no_ahpinn_history_has_zero_physics_weight() {
    let dir = workspace();
    let p = dir.path();
    assert!(hpinn(&["prepare", "--data-dir", "raw", "--subset", "FD001", "--out", "d.csv"], p).status.success());
    let o = hpinn(&["train", "--config", "tiny.toml", "--dataset", "d.csv", "--ablation", "no_ahpinn", "--out", "n"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    for line in fs::read_to_string(p.join("n/history.jsonl")).unwrap().lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(rec["lambda2"], 0.0);
    }
}

#[test]
fn prepare_reports_window_sixty_for_fd003() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(hpinn(&["generate-synthetic", "--out", "raw", "--subset", "FD003", "--small"], p).status.success());
    let o = hpinn(&["prepare", "--data-dir", "raw", "--subset", "FD003", "--out", "d.csv"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("\"window\": 60"));
}

#[test]
fn missing_rul_file_is_named() {
    let dir = workspace();
    fs::remove_file(dir.path().join("raw/RUL_FD001.txt")).unwrap();
    let o = hpinn(&["prepare", "--data-dir", "raw", "--subset", "FD001"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("RUL_FD001.txt"), "{}", stderr(&o));
}

#[test]
fn config_errors_are_listed_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[train]\nbatch_size = 0\nepochs = 0\n[data]\nvalidation_fraction = 2.0\n").unwrap();
    let o = hpinn(&["train", "--config", "bad.toml", "--dataset", "missing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("batch_size") && err.contains("epochs") && err.contains("validation_fraction"), "{err}");
    assert!(!err.contains("missing.csv"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("typo.toml"), "[model]\nd_modle = 8\n").unwrap();
    let o = hpinn(&["train", "--config", "typo.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("d_modle"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = hpinn(&["evaluate", "--data-dir", "raw"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = hpinn(&["train", "--ablation", "m9"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = hpinn(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(hpinn(&["--help"], dir.path()).status.success());
}

#[test]
fn trials_train_consecutive_seeds() {
    let dir = workspace();
    let p = dir.path();
    assert!(hpinn(&["prepare", "--data-dir", "raw", "--subset", "FD001", "--out", "d.csv"], p).status.success());
    let o = hpinn(&["train", "--config", "tiny.toml", "--dataset", "d.csv", "--epochs", "1", "--trials", "2", "--out", "many"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hpinn(&["train", "--config", "tiny.toml", "--dataset", "d.csv", "--epochs", "1", "--seed", "2", "--out", "single"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p.join("many/seed1/checkpoint.bin").is_file());
    assert_eq!(fs::read(p.join("many/seed2/checkpoint.bin")).unwrap(), fs::read(p.join("single/checkpoint.bin")).unwrap());
    let o = hpinn(&["train", "--trials", "2", "--seed", "1"], p);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mismatched_checkpoints_are_rejected() {
    let dir = workspace();
    let p = dir.path();
    assert!(hpinn(&["prepare", "--data-dir", "raw", "--subset", "FD001", "--out", "d.csv"], p).status.success());
    for (ablation, out) in [("full", "a"), ("M3", "b")] {
        let o = hpinn(&["train", "--config", "tiny.toml", "--dataset", "d.csv", "--epochs", "1", "--ablation", ablation, "--out", out], p);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = hpinn(&["evaluate", "--checkpoints", "a/checkpoint.bin", "b/checkpoint.bin", "--data-dir", "raw"], p);
    assert_eq!(o.status.code(), Some(1));
}
