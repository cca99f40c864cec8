use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ddgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddgcn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small 4-class synthetic run on toy5.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let out = dir.join("out");
    let text = format!(
        r#"{{
  "topology": "toy5",
  "partition": "activity",
  "model": {{"channels": [8, 8], "strides": [1, 2], "num_classes": 4}},
  "train": {{"epochs": 12, "batch_size": 8, "base_lr": 0.01, "seed": 1}},
  "data": {{"synthetic": {{"num_classes": 4, "samples_per_class": 4, "frames": 8, "noise_std": 0.0, "seed": 2}}}},
  "output_dir": {out:?},
  "seed": 3{extra}
}}"#
    );
    let path = dir.join("run.json");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_then_eval_reaches_high_train_accuracy() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let o = ddgcn(&["train", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let history = fs::read_to_string(out.join("history_joint.csv")).unwrap();
    assert!(history.starts_with("epoch,lr,loss,accuracy\n"));
    assert_eq!(history.lines().count(), 13);

    let ckpt = out.join("checkpoint_joint.bin");
    let o = ddgcn(&["eval", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let acc: f64 = text.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(acc >= 0.95, "{text}");

    // Same config and seed: byte-identical history.
    let again = TempDir::new().unwrap();
    let cfg2 = write_config(again.path(), "");
    assert!(ddgcn(&["train", "--config", cfg2.to_str().unwrap()]).status.success());
    assert_eq!(
        fs::read(again.path().join("out/history_joint.csv")).unwrap(),
        history.as_bytes()
    );
}

#[test]
fn fusion_trains_two_streams_and_evaluates_both() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#", "stream": "fusion""#);
    let cfg = cfg.to_str().unwrap();
    let o = ddgcn(&["train", "--config", cfg, "--set", "train.epochs=3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let j = out.join("checkpoint_joint.bin");
    let b = out.join("checkpoint_bone.bin");
    assert!(j.exists() && b.exists());
    assert_eq!(
        fs::read_to_string(out.join("history_bone.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let o = ddgcn(&["eval", "--config", cfg, "--checkpoint", j.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "fusion without a second checkpoint");
    let o = ddgcn(&[
        "eval",
        "--config",
        cfg,
        "--checkpoint",
        j.to_str().unwrap(),
        "--checkpoint2",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fused accuracy"));
}

#[test]
fn gradcheck_exits_zero_on_reduced_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = ddgcn(&["gradcheck", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    for op in [
        "channel_correlation",
        "cagc_forward",
        "msa_window",
        "stse_forward",
        "model_forward",
    ] {
        assert!(text.contains(op), "{text}");
    }
}

#[test]
fn inspect_partition_toy2_activity() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = ddgcn(&[
        "inspect-partition",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "topology=toy2",
        "--csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("K = 3"), "{text}");
    // Row for root 0: itself out-degree 1, neighbour 1 a leaf.
    let row0 = text.lines().find(|l| l.trim_start().starts_with("0 ")).unwrap();
    assert_eq!(row0.split_whitespace().collect::<Vec<_>>(), ["0", "1", "0"]);
    let csv = fs::read_to_string(dir.path().join("out/partition_activity.csv")).unwrap();
    assert!(csv.starts_with("subset,row,col,value\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert!(csv.contains("\n0,0,1,"));
}

#[test]
fn export_metrics_copies_and_merges() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "epoch,lr,loss,accuracy\n0,0.1,1.5,0.25\n1,0.1,1.2,0.5\n").unwrap();
    fs::write(&b, "epoch,lr,loss,accuracy\n0,0.01,0.9,0.75\n").unwrap();
    let out = dir.path().join("copy.csv");
    let o = ddgcn(&[
        "export-metrics",
        "--in",
        a.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(&a).unwrap());

    let merged = dir.path().join("merged.csv");
    let o = ddgcn(&[
        "export-metrics",
        "--in",
        a.to_str().unwrap(),
        "--in",
        b.to_str().unwrap(),
        "--out",
        merged.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(&merged).unwrap(),
        "run,epoch,lr,loss,accuracy\na,0,0.1,1.5,0.25\na,1,0.1,1.2,0.5\nb,0,0.01,0.9,0.75\n"
    );

    fs::write(&b, "step,loss\n0,1\n").unwrap();
    let o = ddgcn(&[
        "export-metrics",
        "--in",
        b.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(
        ddgcn(&["train", "--config", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"topology": "toy5", "unknown_key": 1}"#).unwrap();
    let o = ddgcn(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown_key"));

    fs::write(&bad, "{not json").unwrap();
    assert_eq!(
        ddgcn(&["gradcheck", "--config", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let o = ddgcn(&["train", "--config", cfg, "--set", "model.heads=3"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = ddgcn(&["eval", "--config", cfg, "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    // Dataset with the wrong joint count.
    let data = dir.path().join("data.jsonl");
    fs::write(
        &data,
        r#"{"id":"short","label":0,"joints":4,"channels":3,"frames":[[[0,0,0],[1,0,0],[0,1,0],[0,0,1]]]}"#,
    )
    .unwrap();
    let set = format!(r#"data={{"file":{{"path":{:?}}}}}"#, data);
    let o = ddgcn(&["train", "--config", cfg, "--set", &set]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("short"));

    let set = format!(r#"data={{"file":{{"path":{:?}}}}}"#, dir.path().join("nope.jsonl"));
    assert_eq!(ddgcn(&["train", "--config", cfg, "--set", &set]).status.code(), Some(3));
}

#[test]
fn file_dataset_is_preprocessed_to_target_length() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    let frame = |s: f64| -> String {
        let joints: Vec<String> = (0..5).map(|j| format!("[{},{},{}]", s + j as f64, s, 1.0)).collect();
        format!("[{}]", joints.join(","))
    };
    let mut lines = String::new();
    for (i, label) in [0, 1, 0, 1].iter().enumerate() {
        let frames: Vec<String> = (0..3 + i).map(|f| frame((f * (label + 1)) as f64)).collect();
        lines += &format!(
            "{{\"id\":\"s{i}\",\"label\":{label},\"joints\":5,\"channels\":3,\"frames\":[{}]}}\n",
            frames.join(",")
        );
    }
    fs::write(&data, lines).unwrap();
    let cfg = write_config(dir.path(), "");
    let set = format!(r#"data={{"file":{{"path":{:?},"target_frames":8}}}}"#, data);
    let o = ddgcn(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        &set,
        "--set",
        "train.epochs=2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}
