use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmf")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_eval_interpret_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let synth = stdout_json(&qmf(&["synth", "--n", "60", "--seed", "3", "--out", p(&data)]));
    assert_eq!(synth["sentences"], 60);
    for ext in ["cfg", "emb", "lex"] {
        assert!(data.with_extension(ext).exists(), "missing .{ext}");
    }

    let trained = stdout_json(&qmf(&["train", "--data", p(&data), "--epochs", "3", "--k", "4", "--hidden", "8"]));
    let model = dir.path().join("d.model.json");
    let log = dir.path().join("d.run.jsonl");
    assert!(model.exists() && log.exists());
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 5);
    let acc2 = trained["test"]["acc2"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc2));

    let eval = stdout_json(&qmf(&["eval", "--model", p(&model), "--data", p(&data)]));
    assert_eq!(eval, trained["test"]);

    let report = stdout_json(&qmf(&[
        "interpret", "--model", p(&model), "--data", p(&data), "--fragment", "0:0:2", "--fragment", "1:1:1",
    ]));
    assert_eq!(report["subsets"].as_array().unwrap().len(), 7);
    assert_eq!(report["fragments"].as_array().unwrap().len(), 2);
    assert_eq!(report["entanglement"].as_array().unwrap().len(), 4);
    let full = report["subsets"].as_array().unwrap().iter().find(|s| s["subset"] == "tva").unwrap();
    for key in ["acc2", "acc7", "f1", "mae", "corr"] {
        let (a, b) = (full["metrics"][key].as_f64().unwrap(), trained["test"][key].as_f64().unwrap());
        assert!((a - b).abs() < 1e-9, "{key}: {a} vs {b}");
    }

    let inspect = stdout_json(&qmf(&["inspect", "--model", p(&model), "--data", p(&data), "--sentence", "0"]));
    assert_eq!(inspect["observable"]["dims"], serde_json::json!([5, 5, 5]));
    assert!(!inspect["sentence"]["contexts"].as_array().unwrap().is_empty());
}

#[test]
fn pretrained_tables_feed_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    stdout_json(&qmf(&["synth", "--n", "40", "--out", p(&data)]));
    let v = stdout_json(&qmf(&["pretrain", "--data", p(&data), "--modality", "v", "--epochs", "2"]));
    assert_eq!(v["cols"], 5);
    let visual = dir.path().join("d.v.args.json");
    assert!(visual.exists());
    stdout_json(&qmf(&["train", "--data", p(&data), "--epochs", "1", "--visual-args", p(&visual)]));
    stdout_json(&qmf(&["train", "--data", p(&data), "--epochs", "1", "--pretrain-epochs", "1"]));
}

#[test]
fn gridsearch_logs_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    stdout_json(&qmf(&["synth", "--n", "30", "--out", p(&data)]));
    let best = stdout_json(&qmf(&["gridsearch", "--data", p(&data), "--budget", "2", "--epochs", "1", "--jobs", "2"]));
    assert!(best["metrics"]["acc2"].is_number());
    assert_eq!(best["config"]["epochs"], 1);
    let lines: Vec<Value> = std::fs::read_to_string(dir.path().join("d.grid.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    let index = lines[2]["best"].as_u64().unwrap() as usize;
    assert_eq!(lines[index], best);
    let losses: Vec<f64> = lines[..2].iter().map(|r| r["best_val_loss"].as_f64().unwrap()).collect();
    assert!(losses.iter().all(|&l| l >= losses[index]));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(qmf(&["--help"]).status.code(), Some(0));
    assert_eq!(qmf(&["bogus"]).status.code(), Some(1));
    assert_eq!(qmf(&["train", "--data", "/nonexistent/x.jsonl"]).status.code(), Some(2));

    let data = dir.path().join("d.jsonl");
    stdout_json(&qmf(&["synth", "--n", "20", "--out", p(&data)]));
    assert_eq!(qmf(&["train", "--data", p(&data), "--k", "0"]).status.code(), Some(1));
    assert_eq!(qmf(&["train", "--data", p(&data), "--variant", "nope"]).status.code(), Some(1));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"split\": \"train\"}\n").unwrap();
    let out = qmf(&["train", "--data", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
