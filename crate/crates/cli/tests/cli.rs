use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ecg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecg"))
        .args(args)
        .current_dir(dir)
        .env("ECG_OUTPUT_ROOT", dir.join("runs"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ecg")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    stdout
}

const CONFIG: &str = r#"
name = "base"
seed = 3

[data]
manifest = "data/manifest.csv"
task = { kind = "multi_class", classes = 2 }
source = "synthetic:cli"

[preprocess]
pad_length = 1200
segment_length = 512

[model]
architecture = "crnn_gru"
hyper = { width = 4, blocks = [1, 1, 1, 1], hidden = 8, rnn_layers = 1, dropout = 0.0 }

[optim]
lr = 0.001
epochs = 2
batch_size = 16
"#;

/// Synthetic 2 x 64 dataset plus a tiny config.
fn workspace() -> TempDir {
    let t = tempfile::tempdir().unwrap();
    ok(&ecg(t.path(), &["prepare", "--synthetic", "--classes", "2", "--per-class", "64", "--length", "1200", "--seed", "1", "--out", "data"]));
    fs::write(t.path().join("cfg.toml"), CONFIG).unwrap();
    t
}

fn hashes(dir: &Path, ckpt: &str, against: Option<&str>) -> String {
    let mut args = vec!["verify-checkpoint", ckpt];
    if let Some(a) = against {
        args.extend(["--against", a]);
    }
    ok(&ecg(dir, &args))
}

fn line<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines().find_map(|l| l.strip_prefix(key)).unwrap_or_else(|| panic!("no `{key}` in\n{text}")).trim()
}

#[test]
fn prepare_synthetic_writes_manifest_and_split() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(&ecg(t.path(), &["prepare", "--synthetic", "--classes", "2", "--per-class", "64", "--length", "600", "--out", "d"]));
    let manifest = fs::read_to_string(t.path().join("d/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 128);
    assert!(out.contains("class class0: 64"), "{out}");
    assert!(out.contains("train folds 1-8"), "{out}");
    assert!(out.contains("val fold 9") && out.contains("test fold 10"), "{out}");
}

#[test]
fn prepare_keeps_existing_folds_and_leaves_input_alone() {
    let t = workspace();
    let input = t.path().join("data/manifest.csv");
    let before = fs::read(&input).unwrap();
    let out = ok(&ecg(t.path(), &["prepare", "--manifest", "data/manifest.csv", "--task", "multiclass", "--cache", "--out", "copy"]));
    assert_eq!(fs::read(&input).unwrap(), before);
    assert!(out.contains("val fold 9 (") && out.contains("test fold 10 ("), "{out}");
    let copy = fs::read_to_string(t.path().join("copy/manifest.csv")).unwrap();
    assert_eq!(copy.lines().count(), 129);
    assert!(t.path().join("copy/cache/manifest.csv").is_file());
    let refused = ecg(t.path(), &["prepare", "--manifest", "data/manifest.csv", "--out", "data"]);
    assert_eq!(refused.status.code(), Some(2));
}

#[test]
fn missing_label_column_exits_2_naming_it() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("m.csv"), "id,path,fold\na,a.hea,1\n").unwrap();
    let out = ecg(t.path(), &["prepare", "--manifest", "m.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels"));
}

#[test]
fn malformed_records_are_listed_by_id() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("m.csv"), "id,path,labels,fold\nrec_a,gone.hea,x,1\nrec_b,gone2.csv,y,2\n").unwrap();
    let out = ecg(t.path(), &["prepare", "--manifest", "m.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rec_a") && err.contains("rec_b"), "{err}");
}

#[test]
fn train_writes_a_complete_run_directory() {
    let t = workspace();
    ok(&ecg(t.path(), &["train", "--config", "cfg.toml", "--lr", "0.0005"]));
    let run = t.path().join("runs/base");
    for f in ["config.toml", "history.csv", "history.json", "best.ckpt", "metrics.json", "summary.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    for k in ["accuracy", "f1", "map", "gmean", "auc", "sensitivity", "specificity", "ppv"] {
        assert!(metrics[k].is_number(), "{k} missing");
    }
    let snapshot: toml::Table = toml::from_str(&fs::read_to_string(run.join("config.toml")).unwrap()).unwrap();
    assert_eq!(snapshot["optim"]["lr"].as_float(), Some(0.0005));
    assert_eq!(fs::read_to_string(run.join("history.csv")).unwrap().lines().count(), 3);
}

#[test]
fn snapshot_rerun_reproduces_history_and_parameters() {
    let t = workspace();
    ok(&ecg(t.path(), &["train", "--config", "cfg.toml", "--set", "augment.sine.enabled=true", "--out", "a"]));
    ok(&ecg(t.path(), &["train", "--config", "a/config.toml", "--out", "b"]));
    assert_eq!(fs::read(t.path().join("a/history.json")).unwrap(), fs::read(t.path().join("b/history.json")).unwrap());
    let diff = hashes(t.path(), "a/best.ckpt", Some("b/best.ckpt"));
    assert_eq!(line(&diff, "changed:"), "");
}

#[test]
fn finetune_head_preserves_backbone() {
    let t = workspace();
    ok(&ecg(t.path(), &["train", "--config", "cfg.toml", "--out", "src"]));
    ok(&ecg(t.path(), &["finetune", "--config", "cfg.toml", "--from-checkpoint", "src/best.ckpt", "--mode", "head", "--out", "head"]));
    ok(&ecg(t.path(), &["finetune", "--config", "cfg.toml", "--from-checkpoint", "src/best.ckpt", "--mode", "all", "--out", "all"]));
    let source = hashes(t.path(), "src/best.ckpt", None);
    let head = hashes(t.path(), "head/best.ckpt", Some("src/best.ckpt"));
    let all = hashes(t.path(), "all/best.ckpt", Some("src/best.ckpt"));
    assert_eq!(line(&head, "backbone:"), line(&source, "backbone:"));
    assert_ne!(line(&head, "head:"), line(&source, "head:"));
    assert_eq!(line(&head, "changed:"), "head.weight,head.bias");
    assert_eq!(line(&head, "backbone identical:"), "yes");
    assert_eq!(line(&all, "backbone identical:"), "no");
    let summary = fs::read_to_string(t.path().join("head/summary.json")).unwrap();
    assert!(summary.contains("\"pretrain\": \"synthetic:cli\""), "{summary}");
}

#[test]
fn incompatible_checkpoint_fails_before_training() {
    let t = workspace();
    ok(&ecg(t.path(), &["train", "--config", "cfg.toml", "--out", "src"]));
    let out = ecg(t.path(), &["finetune", "--config", "cfg.toml", "--set", "model.hyper.hidden=6", "--from-checkpoint", "src/best.ckpt", "--mode", "all", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!t.path().join("x").exists());
}

#[test]
fn config_errors_exit_2() {
    let t = workspace();
    let unknown = ecg(t.path(), &["train", "--config", "cfg.toml", "--set", "optim.learning_rate=0.1"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("learning_rate"));
    let bad = ecg(t.path(), &["train", "--config", "cfg.toml", "--set", "preprocess.segment_length=5000"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(ecg(t.path(), &["train", "--config", "nope.toml"]).status.code(), Some(2));
    assert_eq!(ecg(t.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn sweep_builds_sorted_leaderboard() {
    let t = workspace();
    fs::write(t.path().join("grid.toml"), "\"optim.lr\" = [0.001, 0.002]\n[preprocess]\nnormalization = [\"zscore\", \"logscale\"]\n").unwrap();
    ok(&ecg(t.path(), &["sweep", "--config", "cfg.toml", "--grid", "grid.toml", "--out", "sw"]));
    let sw = t.path().join("sw");
    for i in 0..4 {
        assert!(sw.join(format!("run_{i:03}/metrics.json")).is_file());
    }
    let mut rdr = csv::Reader::from_path(sw.join("leaderboard.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let f1: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(f1.windows(2).all(|w| w[0] >= w[1]), "{f1:?}");

    // best row re-run from its snapshot reproduces the reported val F1
    let best = &rows[0][1];
    ok(&ecg(t.path(), &["train", "--config", &format!("sw/{best}/config.toml"), "--out", "again"]));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("again/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["val_f1"].as_f64(), Some(f1[0]));
}

#[test]
fn sweep_records_failures_and_continues() {
    let t = workspace();
    fs::write(t.path().join("grid.toml"), "\"preprocess.segment_length\" = [512, 999999]\n").unwrap();
    ok(&ecg(t.path(), &["sweep", "--config", "cfg.toml", "--grid", "grid.toml", "--out", "sw"]));
    let board = fs::read_to_string(t.path().join("sw/leaderboard.csv")).unwrap();
    let lines: Vec<&str> = board.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",ok"));
    assert!(lines[2].contains("failed"), "{board}");
}

#[test]
fn report_tables_pass_metrics_through() {
    let t = workspace();
    ok(&ecg(t.path(), &["train", "--config", "cfg.toml", "--out", "r1"]));
    ok(&ecg(t.path(), &["train", "--config", "cfg.toml", "--seed", "4", "--out", "r2"]));
    fs::create_dir(t.path().join("empty")).unwrap();
    let out = ecg(t.path(), &["report", "r1", "r2", "empty", "--out", "rep"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping"));
    let mut rdr = csv::Reader::from_path(t.path().join("rep/table.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().skip(3).collect::<Vec<_>>(), ["accuracy", "f1", "map", "gmean"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let dir: PathBuf = t.path().join(&row[0]);
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(row[3].parse::<f64>().unwrap(), m["accuracy"].as_f64().unwrap());
        assert_eq!(row[4].parse::<f64>().unwrap(), m["f1"].as_f64().unwrap());
        assert_eq!(row[5].parse::<f64>().unwrap(), m["map"].as_f64().unwrap());
        assert_eq!(row[6].parse::<f64>().unwrap(), m["gmean"].as_f64().unwrap());
        let radial: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&fs::read_to_string(t.path().join(format!("rep/radial/{}.json", &row[0]))).unwrap()).unwrap();
        let mut keys: Vec<&str> = radial.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["auc", "ppv", "sensitivity", "specificity"]);
    }
    assert_eq!(fs::read_to_string(t.path().join("rep/table.md")).unwrap().lines().count(), 4);
}

#[test]
fn evaluate_matches_run_metrics() {
    let t = workspace();
    ok(&ecg(t.path(), &["train", "--config", "cfg.toml", "--out", "r"]));
    ok(&ecg(t.path(), &["evaluate", "--config", "cfg.toml", "--checkpoint", "r/best.ckpt", "--split", "test", "--out", "eval.json"]));
    let a: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("eval.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("r/metrics.json")).unwrap()).unwrap();
    assert_eq!(a, b);
}
