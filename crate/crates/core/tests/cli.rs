use std::path::Path;
use std::process::{Command, Output};

fn advcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advcp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SCENE: [&str; 14] = [
    "--image_size",
    "16",
    "--building_size",
    "4,6",
    "--distractor_size",
    "2,3",
    "--train_size",
    "16",
    "--val_size",
    "6",
    "--test_size",
    "6",
    "--seed",
    "5",
];

const SMALL_MODEL: [&str; 12] = [
    "--iters", "24", "--warmup", "8", "--eval_every", "12", "--batch_size", "4", "--widths", "4,8", "--feature_dim", "8",
];

#[test]
fn end_to_end_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");

    let mut args = vec!["gen-data", "--out", s(&data)];
    args.extend(SMALL_SCENE);
    ok(&advcp(&args));
    for f in ["train/index.csv", "val/index.csv", "test/index.csv", "scene.cfg"] {
        assert!(data.join(f).exists(), "{f}");
    }
    // masks are never written for the training split
    assert_eq!(std::fs::read_dir(data.join("train/gt")).map(|d| d.count()).unwrap_or(0), 0);

    let cfg = tmp.path().join("train.cfg");
    std::fs::write(&cfg, "# overridden below\nlambda = 0.7\nalpha = 0.5\n").unwrap();
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--config", s(&cfg), "--lambda", "0.3"];
    args.extend(SMALL_MODEL);
    let stdout = ok(&advcp(&args));
    assert!(stdout.contains("F1"), "{stdout}");
    for f in ["config.snapshot", "train_log.csv", "eval_log.csv", "metrics.json", "model.ckpt", "last.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let snapshot = std::fs::read_to_string(run.join("config.snapshot")).unwrap();
    assert!(snapshot.contains("lambda = 0.3"), "{snapshot}");
    assert!(snapshot.contains("alpha = 0.5"), "{snapshot}");
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,L_cls,L_adv,L,N_adv,N_uc,p_uc_norm"), "{log}");
    assert_eq!(log.lines().count(), 25);

    let metrics_path = tmp.path().join("m.json");
    ok(&advcp(&["eval", "--run", s(&run), "--data", s(&data), "--out", s(&metrics_path)]));
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics_path).unwrap()).unwrap();
    for k in ["precision", "recall", "f1", "oa", "iou", "tp", "fp", "fn", "tn"] {
        assert!(metrics.get(k).is_some(), "{k}");
    }
    let total: u64 = ["tp", "fp", "fn", "tn"].iter().map(|k| metrics[k].as_u64().unwrap()).sum();
    assert_eq!(total, 6 * 16 * 16);
    // evaluating twice gives the same record, and matches the run's metrics
    let again = ok(&advcp(&["eval", "--run", s(&run), "--data", s(&data)]));
    assert!(again.contains(&format!("\"tp\": {}", metrics["tp"])), "{again}");
    let run_metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(run_metrics, metrics);

    let heat = tmp.path().join("heat");
    ok(&advcp(&["export-heatmaps", "--run", s(&run), "--data", s(&data), "--count", "2", "--out", s(&heat)]));
    let pngs = std::fs::read_dir(&heat).unwrap().count();
    assert_eq!(pngs, 2 * 6);

    let feats = tmp.path().join("features.csv");
    ok(&advcp(&["export-features", "--run", s(&run), "--data", s(&data), "--count", "1", "--out", s(&feats)]));
    let text = std::fs::read_to_string(&feats).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("sample_id,y,x,gt_label,pred_label,is_adversarial,f_0"), "{header}");
    assert!(header.ends_with("f_7"), "{header}");
    assert_eq!(text.lines().count(), 1 + 16 * 16);

    let table = tmp.path().join("ablate.csv");
    let mut args = vec![
        "ablate", "--data", s(&data), "--param", "lambda", "--values", "0,0.5", "--seeds", "1,2", "--out", s(&table),
    ];
    args.extend(SMALL_MODEL);
    ok(&advcp(&args));
    let csv = std::fs::read_to_string(&table).unwrap();
    // 2 values × 2 seeds + mean and std per value
    assert_eq!(csv.lines().count(), 1 + 4 + 4, "{csv}");
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = advcp(&["gen-data", "--out", s(tmp.path()), "--image_size", "sixty"]);
    assert_eq!(out.status.code(), Some(2));
    let out = advcp(&["gen-data", "--out", s(tmp.path()), "--no_such_key", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = advcp(&["train", "--data", s(tmp.path()), "--out", s(tmp.path()), "--lambda", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = advcp(&["ablate", "--data", s(tmp.path()), "--param", "widths", "--values", "1", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    // unknown verb: usage error from the argument parser
    assert_eq!(advcp(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let out = advcp(&["train", "--data", s(&missing), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = advcp(&["eval", "--run", s(&missing), "--data", s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
}
