//! End-to-end CLI checks: the synth/train/predict/eval/report pipeline in a
//! temp directory, error paths, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tstnet"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tstnet-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_configs(dir: &Path) -> (PathBuf, PathBuf) {
    let synth = serde_json::json!({
        "seed": 5,
        "episodes": 6,
        "m": 12,
        "k_objects": 3,
        "d_o": 10,
        "d_w": 8,
        "vocab": 5,
        "noise_sigma": 0.1,
        "signature_strength": 0.5,
        "seg_frac_min": 0.2,
        "seg_frac_max": 0.5,
        "distractors": 1
    });
    let train = serde_json::json!({
        "d": 16,
        "m": 12,
        "k_objects": 3,
        "k_filters": 2,
        "d_o": 10,
        "d_in": 10,
        "d_w": 8,
        "d_g": 8,
        "proposal_budget": 12,
        "lr": 0.004,
        "epochs": 2,
        "batch": 3,
        "val_split": 0.0,
        "seed": 3
    });
    let synth_path = dir.join("synth.json");
    let train_path = dir.join("train.json");
    fs::write(&synth_path, synth.to_string()).unwrap();
    fs::write(&train_path, train.to_string()).unwrap();
    (synth_path, train_path)
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed ({:?})\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn synth_train_predict_eval_report_pipeline() {
    let dir = temp_dir("pipeline");
    let (synth_cfg, train_cfg) = write_tiny_configs(&dir);
    let data = dir.join("data");
    let ckpt = dir.join("model.tsck");
    let log = dir.join("train.jsonl");
    let preds = dir.join("preds.jsonl");

    let out = bin().args(["synth", "--config"]).arg(&synth_cfg).arg("--out").arg(&data).output().unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("wrote 6 episodes"));
    assert!(data.join("episodes/ep0000/manifest.json").is_file());

    let out = bin()
        .args(["train", "--config"])
        .arg(&train_cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&ckpt)
        .arg("--log")
        .arg(&log)
        .arg("--deterministic")
        .output()
        .unwrap();
    ok(&out);
    assert!(ckpt.is_file());
    let log_text = fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().count(), 2, "one JSON line per epoch");
    let first: serde_json::Value = serde_json::from_str(log_text.lines().next().unwrap()).unwrap();
    for key in ["epoch", "loss", "r1_03", "r1_05", "r1_07", "miou"] {
        assert!(first.get(key).is_some(), "log line missing {key}");
    }

    let out = bin()
        .args(["predict", "--checkpoint"])
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&preds)
        .args(["--top-n", "3"])
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("video-query pairs/s"));
    assert!(stdout.contains("trainable parameters"));
    let pred_lines = fs::read_to_string(&preds).unwrap();
    assert_eq!(pred_lines.lines().count(), 6);
    let record: serde_json::Value = serde_json::from_str(pred_lines.lines().next().unwrap()).unwrap();
    assert!(record["episode_id"].is_string());
    assert_eq!(record["predictions"].as_array().unwrap().len(), 3);

    let report_path = dir.join("report.json");
    let out = bin()
        .args(["eval", "--predictions"])
        .arg(&preds)
        .arg("--data")
        .arg(&data)
        .arg("--report")
        .arg(&report_path)
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("IoU=0.3") && stdout.contains("mIoU") && stdout.contains("R@1"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["episodes"], 6);

    // eval straight from the checkpoint agrees and reports throughput
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("video-query pairs/s"));

    let svg = dir.join("loss.svg");
    let out = bin()
        .args(["report", "--log"])
        .arg(&log)
        .arg("--plot")
        .arg(&svg)
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("final loss"));
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    fs::remove_dir_all(dir).ok();
}

#[test]
fn eval_on_perfect_predictions_prints_all_ones() {
    let dir = temp_dir("perfect");
    let (synth_cfg, _) = write_tiny_configs(&dir);
    let data = dir.join("data");
    ok(&bin().args(["synth", "--config"]).arg(&synth_cfg).arg("--out").arg(&data).output().unwrap());

    // build predictions equal to every ground truth
    let mut lines = Vec::new();
    for entry in fs::read_dir(data.join("episodes")).unwrap() {
        let manifest: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(entry.unwrap().path().join("manifest.json")).unwrap(),
        )
        .unwrap();
        lines.push(
            serde_json::json!({
                "episode_id": manifest["episode_id"],
                "predictions": [{
                    "t_start": manifest["gt"]["t_start"],
                    "t_end": manifest["gt"]["t_end"],
                    "score": 0.9
                }]
            })
            .to_string(),
        );
    }
    let preds = dir.join("perfect.jsonl");
    fs::write(&preds, lines.join("\n")).unwrap();

    let out = bin()
        .args(["eval", "--predictions"])
        .arg(&preds)
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    let stdout = ok(&out);
    let r1_line = stdout.lines().find(|l| l.starts_with("R@1")).unwrap();
    assert_eq!(r1_line.matches("1.0000").count(), 4, "{r1_line}");
    fs::remove_dir_all(dir).ok();
}

#[test]
fn unknown_flag_fails_with_usage() {
    let out = bin().args(["train", "--frobnicate"]).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage") || stderr.contains("unexpected"), "{stderr}");
}

#[test]
fn unknown_subcommand_fails() {
    let out = bin().args(["transmogrify"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn invalid_config_fails_cleanly() {
    let dir = temp_dir("badcfg");
    let bad = dir.join("bad.json");
    fs::write(&bad, r#"{"k_filters": 9, "k_objects": 3}"#).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&bad)
        .args(["--data", "/nonexistent", "--out", "/tmp/never.tsck"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("k_filters"), "{stderr}");
    fs::remove_dir_all(dir).ok();
}

#[test]
fn eval_requires_exactly_one_source() {
    let out = bin().args(["eval", "--data", "/tmp"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn missing_prediction_for_episode_is_an_error() {
    let dir = temp_dir("missingpred");
    let (synth_cfg, _) = write_tiny_configs(&dir);
    let data = dir.join("data");
    ok(&bin().args(["synth", "--config"]).arg(&synth_cfg).arg("--out").arg(&data).output().unwrap());
    let preds = dir.join("partial.jsonl");
    fs::write(
        &preds,
        r#"{"episode_id":"ep0000","predictions":[{"t_start":0.0,"t_end":1.0,"score":0.5}]}"#,
    )
    .unwrap();
    let out = bin()
        .args(["eval", "--predictions"])
        .arg(&preds)
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no predictions for episode"), "{stderr}");
    fs::remove_dir_all(dir).ok();
}

#[test]
fn shipped_shape_configs_parse_to_expected_dimensions() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let charades = tstnet::config::TrainConfig::load(&root.join("configs/charades_shape.json")).unwrap();
    assert_eq!(charades.m, 64);
    assert_eq!(charades.proposal_budget, 384);
    assert_eq!(charades.k_objects, 15);
    assert_eq!(charades.k_filters, 5);
    assert_eq!(charades.d, 512);
    let tacos = tstnet::config::TrainConfig::load(&root.join("configs/tacos_shape.json")).unwrap();
    assert_eq!(tacos.m, 200);
    assert_eq!(tacos.proposal_budget, 800);
}

#[test]
fn gradcheck_command_exits_zero_when_all_fragments_pass() {
    let out = bin().args(["gradcheck"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 12, "{stdout}");
    assert!(!stdout.contains("FAIL"));
}
