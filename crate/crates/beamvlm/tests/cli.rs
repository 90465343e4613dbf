//! The `beamvlm` binary end to end: exit codes, error lines, printed
//! predictions and run-to-run determinism.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use beamvlm::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use beamvlm::cli::base_checksum;
use tempfile::tempdir;

fn beamvlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamvlm")).args(args).env("BEAMVLM_LOG", "error").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = beamvlm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not a JSON error line ({e}): {last}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_small(dir: &Path, sequences: usize, length: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let config = common::write_config(dir, &common::small_config(sequences, length));
    let data = dir.join("data");
    ok(&["gen-data", "--config", s(&config), "--out", s(&data)]);
    (config, data)
}

#[test]
fn rigged_checkpoint_predicts_sevens() {
    let dir = tempdir().unwrap();
    let (_, data) = gen_small(dir.path(), 1, 13);
    let ckpt = dir.path().join("rigged.ckpt");
    common::store_rigged(&ckpt);
    let out = ok(&["predict", "--checkpoint", s(&ckpt), "--data", s(&data), "--sample", "0"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("raw: 7, 7, 7, 7, 7\n"), "{stdout}");
    assert!(stdout.contains("beams: 7, 7, 7, 7, 7\n"), "{stdout}");
    assert!(stdout.contains("valid=true"), "{stdout}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolved predict configuration"));
}

#[test]
fn eval_without_checkpoints_is_a_config_error() {
    let dir = tempdir().unwrap();
    let out = beamvlm(&["eval", "--data", s(dir.path()), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!((e["error"].as_str(), e["code"].as_i64()), (Some("ConfigError"), Some(2)));
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = tempdir().unwrap();
    let out = beamvlm(&["gen-data", "--config", "/nonexistent.json", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "surprise": true}"#).unwrap();
    let out = beamvlm(&["gen-data", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "ConfigError");

    let (_, data) = gen_small(dir.path(), 1, 13);
    let ckpt = dir.path().join("absent.ckpt");
    let out = beamvlm(&["predict", "--checkpoint", s(&ckpt), "--data", s(&data), "--sample", "0"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "IoError");

    common::store_rigged(&ckpt);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    std::fs::write(&ckpt, bytes).unwrap();
    let out = beamvlm(&["predict", "--checkpoint", s(&ckpt), "--data", s(&data), "--sample", "0"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"], "VersionError");

    common::store_rigged(&ckpt);
    let out = beamvlm(&["predict", "--checkpoint", s(&ckpt), "--data", s(&data), "--sample", "99"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "IndexError");

    let out = beamvlm(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(dir.path()), "--k-list", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(beamvlm(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(beamvlm(&["--help"]).status.code(), Some(0));
}

#[test]
fn shipped_preset_generates_the_documented_sample_count() {
    let dir = tempdir().unwrap();
    let config = common::workspace_root().join("scenarios/uav_linear.json");
    let out = dir.path().join("data");
    let res = ok(&["gen-data", "--config", s(&config), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("resolved gen-data configuration"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let n = manifest["samples"].as_array().unwrap().len();
    assert_eq!(n, 200 * (22 - 12));
    assert_eq!(manifest["num_train"].as_u64(), Some(1400));
    assert_eq!(manifest["num_test"].as_u64(), Some(600));
}

#[test]
fn pipeline_is_reproducible_and_thread_count_invariant() {
    let dir = tempdir().unwrap();
    let (config, data) = gen_small(dir.path(), 4, 16);
    let mut checkpoints = Vec::new();
    for (tag, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let ckpt = dir.path().join(format!("vlm_{tag}.ckpt"));
        ok(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&ckpt), "--threads", threads]);
        checkpoints.push(std::fs::read(&ckpt).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
    assert_eq!(checkpoints[0], checkpoints[2]);

    let lstm = dir.path().join("lstm.ckpt");
    ok(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&lstm), "--model", "lstm"]);
    let ckpt = dir.path().join("vlm_a.ckpt");
    let mut csvs = Vec::new();
    for (i, threads) in ["1", "1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("eval{i}"));
        ok(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--checkpoint",
            s(&lstm),
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--threads",
            threads,
            "--k-list",
            "1,4",
        ]);
        csvs.push(std::fs::read_to_string(out.join("metrics.csv")).unwrap());
        for k in [1, 2, 3, 4, 5] {
            assert!(out.join(format!("topk_k{k}.svg")).exists());
        }
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
    let predictors: Vec<&str> = csvs[0].lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(predictors.len(), 15);
    assert!(predictors.contains(&"vlm_a") && predictors.contains(&"lstm") && predictors.contains(&"oracle"));
}

#[test]
fn finetune_and_ablation_round_trip() {
    let dir = tempdir().unwrap();
    let (config, data) = gen_small(dir.path(), 3, 15);
    let base = dir.path().join("base.ckpt");
    ok(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&base)]);
    let tuned = dir.path().join("tuned.ckpt");
    ok(&["finetune", "--config", s(&config), "--checkpoint", s(&base), "--data", s(&data), "--out", s(&tuned)]);
    let (b, _) = Checkpoint::load(&base).unwrap().into_vlm().unwrap();
    let (t, _) = Checkpoint::load(&tuned).unwrap().into_vlm().unwrap();
    assert_eq!(base_checksum(&b), base_checksum(&t));
    assert!(t.lora().is_some());
    assert_eq!(t.params.num_elements() - b.params.num_elements(), t.weight_report().trainable);

    let out = dir.path().join("ablation");
    let prompts = common::workspace_root().join("prompts");
    ok(&["ablate", "--checkpoint", s(&tuned), "--data", s(&data), "--prompts", s(&prompts), "--out", s(&out)]);
    let text = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("variant,horizon,top1,delta_top1_vs_full"));
    assert!(lines.next().unwrap().starts_with("full,1,"));
    let variants: std::collections::BTreeSet<&str> =
        text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants.into_iter().collect::<Vec<_>>(), ["empty-instruction", "full", "no-hint"]);
}
