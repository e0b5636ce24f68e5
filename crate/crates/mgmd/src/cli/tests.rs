use super::*;
use crate::analysis;
use serde_json::{json, Value};
use std::fs;

fn tiny_config(dir: &Path) -> RunConfig {
    RunConfig {
        dataset: DataConfig::Synthetic {
            n: 60,
            modes: 4,
            radius: 1.0,
            sigma: 0.05,
            seed: 5,
        },
        split: SplitConfig {
            train_fraction: 0.5,
            seed: 1,
        },
        train: TrainConfig {
            method: Method::Mgmd,
            k: 2,
            epochs: 2,
            batch_size: 8,
            objective: Objective::js(),
            optimizer: None,
            d_steps_per_g_step: None,
            clip_c: None,
            seed: 11,
            checkpoint_interval: None,
            stratified: false,
            arch: Default::default(),
        },
        eval: EvalConfig {
            per_side: 6,
            selection_seed: 3,
            attack: AttackConfig::default(),
        },
        output_dir: dir.to_path_buf(),
    }
}

fn write_config(config: &RunConfig, path: &Path) {
    fs::write(path, serde_json::to_string_pretty(config).unwrap()).unwrap();
}

fn trained_checkpoint(dir: &Path) -> PathBuf {
    let config = tiny_config(&dir.join("out"));
    let config_path = dir.join("run.json");
    write_config(&config, &config_path);
    cmd_train(&config_path).unwrap()
}

#[test]
fn config_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let text = serde_json::to_string(&config).unwrap();
    let back: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, config);
}

#[test]
fn config_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(tiny_config(dir.path())).unwrap();
    v["typo_field"] = json!(1);
    assert!(serde_json::from_value::<RunConfig>(v).is_err());
}

#[test]
fn eval_section_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(tiny_config(dir.path())).unwrap();
    v.as_object_mut().unwrap().remove("eval");
    let config: RunConfig = serde_json::from_value(v).unwrap();
    assert_eq!(config.eval, EvalConfig::default());
    assert_eq!(config.eval.per_side, 128);
}

#[test]
fn bad_configs_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();

    let mut zero_k = tiny_config(dir.path());
    zero_k.train.k = 0;
    let path = dir.path().join("zero_k.json");
    write_config(&zero_k, &path);
    let err = cmd_train(&path).unwrap_err();
    assert_eq!(err.exit_code(), 1, "k=0 should be a config error: {err}");

    let mut bad_fraction = tiny_config(dir.path());
    bad_fraction.split.train_fraction = 1.2;
    let path = dir.path().join("bad_fraction.json");
    write_config(&bad_fraction, &path);
    assert_eq!(cmd_train(&path).unwrap_err().exit_code(), 1);

    let missing = dir.path().join("nope.json");
    assert_eq!(cmd_train(&missing).unwrap_err().exit_code(), 1);

    let garbled = dir.path().join("garbled.json");
    fs::write(&garbled, "{not json").unwrap();
    assert_eq!(cmd_train(&garbled).unwrap_err().exit_code(), 1);
}

#[test]
fn oversized_eval_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.eval.per_side = 40; // only 30 rows per side exist
    let path = dir.path().join("run.json");
    write_config(&config, &path);
    let err = cmd_train(&path).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("per_side"));
}

#[test]
fn hash_ignores_output_dir_but_tracks_identity() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_config(&dir.path().join("a"));
    let mut moved = base.clone();
    moved.output_dir = dir.path().join("b");
    assert_eq!(config_hash(&base), config_hash(&moved));

    let mut reseeded = base.clone();
    reseeded.train.seed += 1;
    assert_ne!(config_hash(&base), config_hash(&reseeded));

    let mut other_data = base.clone();
    if let DataConfig::Synthetic { seed, .. } = &mut other_data.dataset {
        *seed += 1;
    }
    assert_ne!(config_hash(&base), config_hash(&other_data));
}

#[test]
fn train_writes_checkpoint_manifest_and_losses() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    assert!(ckpt.ends_with("checkpoint.ckpt"));
    let model = load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.k(), 2);
    assert_eq!(model.loss_history.len(), 2);

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(manifest_path(&ckpt)).unwrap()).unwrap();
    let echoed: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap(), config_hash(&echoed));
    assert_eq!(manifest["seed"].as_u64().unwrap(), 11);
    assert_eq!(manifest["artifacts"]["checkpoint"], "checkpoint.ckpt");

    let loss = fs::read_to_string(ckpt.parent().unwrap().join("loss.csv")).unwrap();
    let mut lines = loss.lines();
    assert!(lines.next().unwrap().starts_with("# method=mgmd k=2 objective=js"));
    assert_eq!(lines.next().unwrap(), "epoch,network,index,loss");
    // 2 epochs x (2 discriminators + 2 generators)
    assert_eq!(lines.count(), 8);
}

#[test]
fn same_identity_means_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut first = tiny_config(&dir.path().join("a"));
    let mut second = tiny_config(&dir.path().join("b"));
    first.output_dir = dir.path().join("a");
    second.output_dir = dir.path().join("b");
    let p1 = dir.path().join("first.json");
    let p2 = dir.path().join("second.json");
    write_config(&first, &p1);
    write_config(&second, &p2);
    let c1 = cmd_train(&p1).unwrap();
    let c2 = cmd_train(&p2).unwrap();
    assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
    assert_eq!(
        fs::read(c1.parent().unwrap().join("loss.csv")).unwrap(),
        fs::read(c2.parent().unwrap().join("loss.csv")).unwrap()
    );
}

#[test]
fn attack_writes_both_targets_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let written = cmd_attack(&ckpt, None, None, None).unwrap();
    assert_eq!(written.len(), 2);
    for path in &written {
        let doc: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        let acc = doc["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(doc["config_hash"].as_str().unwrap().len() == 64);
        assert_eq!(doc["method"], "mgmd");
        assert_eq!(doc["k"], 2);
    }
    let d: Value = serde_json::from_str(
        &fs::read_to_string(ckpt.parent().unwrap().join("attack_discriminators.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(d["aggregation"], "max");
    let g: Value = serde_json::from_str(
        &fs::read_to_string(ckpt.parent().unwrap().join("attack_generators.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(g["aggregation"], Value::Null);
}

#[test]
fn attack_flags_narrow_and_override() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let written = cmd_attack(
        &ckpt,
        Some(AttackTarget::Generators),
        None,
        Some(99),
    )
    .unwrap();
    assert_eq!(written.len(), 1);
    assert!(written[0].ends_with("attack_generators.json"));
    assert!(!ckpt.parent().unwrap().join("attack_discriminators.json").exists());
    let doc: Value = serde_json::from_str(&fs::read_to_string(&written[0]).unwrap()).unwrap();
    assert_eq!(doc["seed"].as_u64().unwrap(), 99);

    let own = cmd_attack(
        &ckpt,
        Some(AttackTarget::Discriminators),
        Some(Aggregation::Own),
        None,
    )
    .unwrap();
    let doc: Value = serde_json::from_str(&fs::read_to_string(&own[0]).unwrap()).unwrap();
    assert_eq!(doc["aggregation"], "own");
}

#[test]
fn attack_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let first = cmd_attack(&ckpt, None, None, None).unwrap();
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
    let second = cmd_attack(&ckpt, None, None, None).unwrap();
    for (path, before) in second.iter().zip(bytes) {
        assert_eq!(fs::read(path).unwrap(), before);
    }
}

#[test]
fn attack_without_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    fs::remove_file(manifest_path(&ckpt)).unwrap();
    let err = cmd_attack(&ckpt, None, None, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("manifest"));
}

#[test]
fn tampered_manifest_hash_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let mpath = manifest_path(&ckpt);
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
    v["config"]["train"]["epochs"] = json!(99);
    fs::write(&mpath, serde_json::to_string(&v).unwrap()).unwrap();
    let err = cmd_attack(&ckpt, None, None, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("hash"));
}

#[test]
fn manifest_pointing_at_other_data_fails_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let mpath = manifest_path(&ckpt);
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
    v["config"]["dataset"]["seed"] = json!(12345);
    // Re-seal the hash so only the data digest can catch the swap.
    let config: RunConfig = serde_json::from_value(v["config"].clone()).unwrap();
    v["config_hash"] = json!(config_hash(&config));
    fs::write(&mpath, serde_json::to_string(&v).unwrap()).unwrap();
    let err = cmd_attack(&ckpt, None, None, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("digest"));
}

#[test]
fn report_emits_scores_hist_and_gap() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let written = cmd_report(&ckpt).unwrap();
    assert_eq!(written.len(), 3);
    for p in &written {
        assert!(p.exists(), "{} missing", p.display());
    }

    // gap.json must agree exactly with an in-process recomputation.
    let config = tiny_config(&dir.path().join("out"));
    let data = load_dataset(&config.dataset).unwrap();
    let (train_data, holdout) = split_dataset(&data, &config.split).unwrap();
    let model = load_checkpoint(&ckpt).unwrap();
    let report = collect_scores(&model, &train_data, &holdout).unwrap();
    let (mean_gap, w1) = gap_metrics(&report).unwrap();
    let doc: Value =
        serde_json::from_str(&fs::read_to_string(ckpt.parent().unwrap().join("gap.json")).unwrap())
            .unwrap();
    assert_eq!(doc["mean_gap"].as_f64().unwrap(), mean_gap);
    assert_eq!(doc["w1"].as_f64().unwrap(), w1);
    assert_eq!(doc["k"].as_u64().unwrap(), 2);
    assert_eq!(doc["config_hash"].as_str().unwrap(), config_hash(&config));

    let scores = fs::read_to_string(ckpt.parent().unwrap().join("scores.csv")).unwrap();
    // header comment + column row + one row per (side, sample) pair
    assert_eq!(scores.lines().count(), 2 + 30 + 30);
}

#[test]
fn compare_fills_the_grid_and_caches_cells() {
    let dir = tempfile::tempdir().unwrap();
    let template = tiny_config(&dir.path().join("unused"));
    let matrix = json!({
        "template": serde_json::to_value(&template).unwrap(),
        "cells": [
            {"method": "classic", "k": 1, "objective": "js"},
            {"method": "mgmd", "k": 2, "objective": "js"},
        ],
        "seeds": [7, 8],
    });
    let mpath = dir.path().join("matrix.json");
    fs::write(&mpath, serde_json::to_string(&matrix).unwrap()).unwrap();
    let out = dir.path().join("cmp");

    let first = cmd_compare(&mpath, &out).unwrap();
    assert_eq!(first.cells_trained, 4);
    assert_eq!(first.cells_cached, 0);
    let summary = fs::read_to_string(&first.summary_path).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(
        lines[1],
        "method,k,objective,mia_d,mia_g,mean_gap,w1,seeds_averaged,status"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("classic,1,js,"));
    assert!(lines[3].starts_with("mgmd,2,js,"));
    for row in &lines[2..] {
        assert!(row.ends_with(",2,ok"), "bad row: {row}");
    }

    // Reruns hit the cache and reproduce the summary byte for byte.
    let second = cmd_compare(&mpath, &out).unwrap();
    assert_eq!(second.cells_trained, 0);
    assert_eq!(second.cells_cached, 4);
    assert_eq!(fs::read_to_string(&second.summary_path).unwrap(), summary);
}

#[test]
fn compare_records_cell_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let template = tiny_config(&dir.path().join("unused"));
    let matrix = json!({
        "template": serde_json::to_value(&template).unwrap(),
        "cells": [
            // pargan needs k >= 2, so this cell must fail its validation
            {"method": "pargan", "k": 1, "objective": "js"},
            {"method": "classic", "k": 1, "objective": "js"},
        ],
        "seeds": [7],
    });
    let mpath = dir.path().join("matrix.json");
    fs::write(&mpath, serde_json::to_string(&matrix).unwrap()).unwrap();
    let summary = cmd_compare(&mpath, &dir.path().join("cmp")).unwrap();
    let text = fs::read_to_string(&summary.summary_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[2].starts_with("pargan-style,1,js,,,,,0,error: "));
    assert!(!lines[2].contains('\n'));
    assert!(lines[3].starts_with("classic,1,js,"));
    assert!(lines[3].ends_with(",1,ok"));
}

#[test]
fn compare_rejects_empty_grids() {
    let dir = tempfile::tempdir().unwrap();
    let template = tiny_config(&dir.path().join("unused"));
    for (cells, seeds) in [(json!([]), json!([1])), (json!([{"method": "classic", "k": 1, "objective": "js"}]), json!([]))] {
        let matrix = json!({
            "template": serde_json::to_value(&template).unwrap(),
            "cells": cells,
            "seeds": seeds,
        });
        let mpath = dir.path().join("matrix.json");
        fs::write(&mpath, serde_json::to_string(&matrix).unwrap()).unwrap();
        let err = cmd_compare(&mpath, &dir.path().join("cmp")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn wasserstein_cells_keep_their_family_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let template = tiny_config(dir.path());
    let cell = CellSpec {
        method: Method::Mgmd,
        k: 2,
        objective: ObjectiveKind::Wasserstein,
    };
    let config = cell_config(&template, &cell, 42, dir.path());
    assert_eq!(config.train.objective, Objective::wasserstein());
    assert_eq!(config.train.seed, 42);
    assert_eq!(config.train.resolved_clip(), Some(0.01));

    let js_cell = CellSpec {
        method: Method::Classic,
        k: 1,
        objective: ObjectiveKind::Js,
    };
    let js_config = cell_config(&template, &js_cell, 42, dir.path());
    assert_eq!(js_config.train.objective, Objective::js());
    assert_eq!(js_config.train.clip_c, None);
}

#[test]
fn loss_csv_is_readable_back() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let model = load_checkpoint(&ckpt).unwrap();
    let text = fs::read_to_string(ckpt.parent().unwrap().join("loss.csv")).unwrap();
    let mut seen = 0;
    for line in text.lines().skip(2) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4);
        let epoch: usize = fields[0].parse().unwrap();
        let idx: usize = fields[2].parse().unwrap();
        let loss: f64 = fields[3].parse().unwrap();
        let recorded = match fields[1] {
            "discriminator" => model.loss_history[epoch].d_ascent[idx],
            "generator" => model.loss_history[epoch].g_value[idx],
            other => panic!("unknown network column {other}"),
        };
        assert_eq!(loss, recorded, "csv row does not round-trip: {line}");
        seen += 1;
    }
    assert_eq!(seen, 8);
}

#[test]
fn report_meta_matches_write_paths() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    cmd_report(&ckpt).unwrap();
    let hist = fs::read_to_string(ckpt.parent().unwrap().join("hist.csv")).unwrap();
    assert!(hist.lines().next().unwrap().contains("method=mgmd"));
    assert_eq!(hist.lines().filter(|l| !l.starts_with('#')).count(), 1 + analysis::DEFAULT_BINS);
}
