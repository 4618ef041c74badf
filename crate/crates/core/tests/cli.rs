use std::path::Path;
use std::process::{Command, Output};

use detnet::model::{default_temporal, BackboneLayer, ModelConfig};
use detnet::pipeline::{LrSchedule, TrainConfig, METRICS_HEADER};
use detnet::synthvid::DatasetSpec;

fn detnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run detnet")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

#[test]
fn generate_train_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_json(&root.join("spec.json"), &DatasetSpec::blur_heavy(4, 31));
    let o = detnet(&["generate", "--spec", p(&root.join("spec.json")), "--out", p(&root.join("data"))]);
    assert!(o.status.success(), "{o:?}");
    assert!(root.join("data/seq_003/frame_020.ppm").exists());

    let o = detnet(&["anchors", "--ann", p(&root.join("data/annotations.jsonl")), "-k", "3", "--stride", "8"]);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["k"], 3);
    assert_eq!(v["stride"], 8);
    let priors = v["priors"].as_array().unwrap();
    assert_eq!(priors.len(), 3);
    assert!(priors.iter().all(|q| q[0].as_f64().unwrap() > 0.0 && q[1].as_f64().unwrap() > 0.0));

    let cfg = TrainConfig {
        epochs: 1,
        lr: LrSchedule {
            initial: 1e-2,
            decayed: 1e-3,
            boundary: 1,
        },
        batch_size: 4,
        samples_per_epoch: Some(8),
        model: ModelConfig::tiny(),
        ..TrainConfig::default()
    };
    write_json(&root.join("train.json"), &cfg);
    let o = detnet(&[
        "train",
        "--config",
        p(&root.join("train.json")),
        "--data",
        p(&root.join("data")),
        "--out",
        p(&root.join("run")),
    ]);
    assert!(o.status.success(), "{o:?}");
    let metrics = std::fs::read_to_string(root.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
    assert_eq!(metrics.lines().count(), 3);

    let ckpt = root.join("run/model.bin");
    let o = detnet(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&root.join("data")),
        "--iou",
        "0.5",
        "--report",
        p(&root.join("report.json")),
        "--pr",
        p(&root.join("pr.csv")),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("mAP@0.5 = "), "{}", stdout(&o));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["iou_threshold"], 0.5);
    let map = rep["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    let pr = std::fs::read_to_string(root.join("pr.csv")).unwrap();
    assert!(pr.lines().next().unwrap().contains("recall"));

    let o = detnet(&[
        "predict",
        "--ckpt",
        p(&ckpt),
        "--seq",
        p(&root.join("data/seq_001")),
        "--out",
        p(&root.join("pred.jsonl")),
        "--score",
        "0.0",
    ]);
    assert!(o.status.success(), "{o:?}");
    let pred = std::fs::read_to_string(root.join("pred.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = pred.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 21);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["frame"], i);
        assert!(l["detections"].is_array());
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        backbone: vec![
            BackboneLayer {
                out_channels: 4,
                kernel: 3,
                pool: true,
            },
            BackboneLayer {
                out_channels: 6,
                kernel: 3,
                pool: true,
            },
        ],
        temporal: default_temporal(6),
        head_width: 6,
        anchors: 2,
        classes: 1,
        ..ModelConfig::default()
    }
}

#[test]
fn gradcheck_reports_and_fails_on_zero_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("model.json");
    write_json(&cfg, &small_model());
    let o = detnet(&["gradcheck", "--config", p(&cfg)]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("max relative error"));
    let o = detnet(&["gradcheck", "--config", p(&cfg), "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    assert_eq!(detnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(detnet(&["train", "--config"]).status.code(), Some(1));
    assert_eq!(detnet(&["experiment", "--preset", "nonsense"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let o = detnet(&["anchors", "--ann", p(&missing.join("annotations.jsonl"))]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    let o = detnet(&["predict", "--ckpt", p(&missing.join("m.bin")), "--seq", p(&missing), "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    let o = detnet(&["anchors", "--ann", p(&missing), "--stride", "0"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    assert!(detnet(&["--help"]).status.success());
}
