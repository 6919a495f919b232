use std::path::Path;
use std::process::Command;

use paid_core::bench::make_domain_sequence;
use paid_core::cli::*;
use paid_core::gradcheck::NamedCheck;
use paid_core::nnmodel::{argmax_rows, LayerSelector};
use paid_core::paidlayer::UpdateMode;
use paid_core::PaidError;
use serde_json::Value;

mod common;

use common::{golden, hand_report, tiny};

fn pretrained(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let ckpt = dir.join("source.ckpt");
    cmd_pretrain(cfg, &ckpt).unwrap();
    ckpt
}

#[test]
fn report_csv_matches_golden_file() {
    assert_eq!(report_csv(&hand_report()).unwrap(), golden("report.csv"));
    let header = golden("report.csv").lines().next().unwrap().to_string();
    assert_eq!(header, CSV_HEADER.join(","));
}

#[test]
fn report_json_matches_golden_file() {
    let cfg = tiny();
    let v = report_json(&cfg, 4, &hand_report()).unwrap();
    let expected: Value = serde_json::from_str(&golden("report_results.json")).unwrap();
    assert_eq!(v["results"], expected);
    assert_eq!(v["seed"], 4);
    assert_eq!(v["metadata"]["wall_time_s"], 12.5);
    let echoed: ExperimentConfig = serde_json::from_value(v["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["config", "metadata", "results", "seed"]);
}

#[test]
fn unknown_keys_fail_with_their_path() {
    let err = ExperimentConfig::from_json(r#"{"adapt": {"lambdaa": 0.1}}"#).unwrap_err();
    assert!(matches!(&err, PaidError::Config(m) if m.contains("adapt.lambdaa")), "{err}");
    assert_eq!(err.exit_code(), 2);
    let err = ExperimentConfig::from_json(r#"{"bench": {"data": {"sidee": 4}}}"#).unwrap_err();
    assert!(err.to_string().contains("bench.data.sidee"), "{err}");
    assert!(ExperimentConfig::from_json(r#"{"mode": "sideways"}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"adapt": {"r": 3}}"#).is_err());

    let parsed = ExperimentConfig::from_json(&serde_json::to_string(&tiny()).unwrap()).unwrap();
    assert_eq!(parsed, tiny());
}

#[test]
fn defaults_are_paid_on_every_linear_layer() {
    let cfg = ExperimentConfig::default().adapt_config(0).unwrap();
    assert_eq!(cfg.mode, UpdateMode::Paid);
    assert_eq!(cfg.selector.to_string(), "qkvom");
    assert_eq!((cfg.batch_size, cfg.r, cfg.n_source), (64, 12, 500));

    let mut c = ExperimentConfig::default();
    c.apply_seed_override(Some("17")).unwrap();
    assert_eq!(c.seeds, vec![17]);
    assert!(c.apply_seed_override(Some("-1")).is_err());
}

#[test]
fn pretrain_checkpoint_feeds_adapt_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ckpt = pretrained(dir.path(), &cfg);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(sidecar(&ckpt)).unwrap()).unwrap();
    assert_eq!(meta["pretrain"]["seed"], 4);
    assert!(meta["pretrain"]["clean_accuracy"].as_f64().unwrap() > 0.5);

    let report = cmd_adapt(&cfg, &ckpt, &AdaptOverrides::default(), &dir.path().join("run"), None).unwrap();
    assert_eq!(report.segments.len(), 2);
    assert!(dir.path().join("run.csv").exists() && dir.path().join("run.json").exists());

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[40] ^= 0x10;
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes).unwrap();
    let err = cmd_adapt(&cfg, &bad, &AdaptOverrides::default(), &dir.path().join("x"), None).unwrap_err();
    assert!(matches!(err, PaidError::Integrity(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn frozen_adapt_reproduces_source_error_per_domain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ckpt = pretrained(dir.path(), &cfg);
    let overrides = AdaptOverrides { mode: Some(UpdateMode::Frozen), ..AdaptOverrides::default() };
    let report = cmd_adapt(&cfg, &ckpt, &overrides, &dir.path().join("frozen"), None).unwrap();

    let source = attach_source(&cfg, 4, Checkpoint::load(&ckpt).unwrap().to_network(&cfg.model).unwrap()).unwrap();
    let stream = make_domain_sequence(&cfg.bench.domains, 1, &source.test, cfg.adapt.batch_size, 4).unwrap();
    for (seg, row) in stream.segments().zip(&report.segments) {
        let (mut wrong, mut n) = (0, 0);
        for (x, y) in seg.unwrap().batches {
            let pred = argmax_rows(&source.net.infer(&x).unwrap().logits);
            wrong += pred.iter().zip(&y).filter(|(p, t)| p != t).count();
            n += y.len();
        }
        assert_eq!(row.error, wrong as f64 / n as f64, "{}", row.domain);
        assert_eq!(row.delta_s, 0.0);
    }
}

#[test]
fn reruns_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ckpt = pretrained(dir.path(), &cfg);
    let overrides = AdaptOverrides { rounds: Some(2), ..AdaptOverrides::default() };
    for stem in ["a", "b"] {
        cmd_adapt(&cfg, &ckpt, &overrides, &dir.path().join(stem), None).unwrap();
    }
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.csv").lines().count(), 5);
    let json = |f: &str| without_metadata(serde_json::from_str(&read(f)).unwrap());
    assert_eq!(json("a.json"), json("b.json"));
}

#[test]
fn diagnose_contrasts_paid_with_free_directions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ckpt = pretrained(dir.path(), &cfg);
    let same = cmd_diagnose(&ckpt, &ckpt, Some(&dir.path().join("same.json"))).unwrap();
    assert_eq!(same.layers.len(), 6);
    assert!(same.layers.iter().all(|l| l.delta.delta_m == 0.0 && l.delta.delta_a <= 1e-12 && l.delta.delta_s == 0.0), "{same:?}");
    let on_disk: Diagnosis = serde_json::from_str(&std::fs::read_to_string(dir.path().join("same.json")).unwrap()).unwrap();
    assert_eq!(on_disk, same);

    let adapted = |mode: UpdateMode| {
        let out = dir.path().join(format!("{mode}.ckpt"));
        let o = AdaptOverrides { mode: Some(mode), ..AdaptOverrides::default() };
        cmd_adapt(&cfg, &ckpt, &o, &dir.path().join(mode.to_string()), Some(&out)).unwrap();
        cmd_diagnose(&ckpt, &out, None).unwrap()
    };
    let paid = adapted(UpdateMode::Paid);
    assert!(paid.layers.iter().all(|l| l.delta.delta_s <= 1e-9), "{paid:?}");
    assert!(paid.mean.delta_a > 0.0);
    let free = adapted(UpdateMode::MagDirFree);
    assert!(free.layers.iter().all(|l| l.delta.delta_s > 0.0), "{free:?}");
}

#[test]
fn diagnose_names_mismatched_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny();
    let mut b = tiny();
    b.model.dim = 8;
    b.model.heads = 2;
    let (pa, pb) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    cmd_pretrain(&a, &pa).unwrap();
    cmd_pretrain(&b, &pb).unwrap();
    let err = cmd_diagnose(&pa, &pb, None).unwrap_err();
    assert!(matches!(&err, PaidError::Shape(m) if m.starts_with("blocks.0.")), "{err}");
}

#[test]
fn gradcheck_lists_every_operation_and_catches_bugs() {
    let mut out = Vec::new();
    let report = cmd_gradcheck(0, &[4], Vec::new(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    for c in &report.checks {
        assert!(text.contains(&c.name), "{} missing from output", c.name);
    }
    for needle in ["householder", "paidlayer.paid", "paidlayer.frozen", "nnmodel.transformer", "adapt.alignment_loss"] {
        assert!(text.contains(needle), "{needle}");
    }

    let bug = NamedCheck::new("fixture.wrong_cos", || {
        let x: [f64; 3] = [0.3, -1.2, 2.0];
        let f = |v: &[f64]| v.iter().map(|a| a.sin()).sum::<f64>();
        let analytic: Vec<f64> = x.iter().map(|a| -a.cos()).collect();
        let h = 1e-6;
        let numeric = (0..3)
            .map(|i| {
                let (mut p, mut m) = (x, x);
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect();
        Ok((analytic, numeric))
    });
    let err = cmd_gradcheck(0, &[4], vec![bug], &mut Vec::new()).unwrap_err();
    assert!(matches!(&err, PaidError::Numeric(m) if m.contains("fixture.wrong_cos")), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(cmd_gradcheck(0, &[1], Vec::new(), &mut Vec::new()), Err(PaidError::Config(_))));
}

#[test]
fn sweep_grids_expand_to_the_expected_cells() {
    let cfg = ExperimentConfig::default();
    let grid = SweepGrid::from_json(r#"{"r": [2, 4, 8, 12, 16, 24]}"#).unwrap();
    assert_eq!(grid.cells(&cfg).len(), 6);
    let grid = SweepGrid::from_json(r#"{"batch_size": [1, 2, 4, 8, 64], "seed": [0, 1]}"#).unwrap();
    let cells = grid.cells(&cfg);
    assert_eq!(cells.len(), 10);
    assert!(cells.iter().all(|c| c.r == 12 && c.n_source == 500));
    assert!(SweepGrid::from_json(r#"{"lr": [1]}"#).is_err());
}

#[test]
fn sweep_writes_one_report_per_cell_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let grid = SweepGrid {
        r: vec![2, 4],
        mode: vec![UpdateMode::Paid, UpdateMode::MagDirFree],
        selector: vec![LayerSelector::all()],
        ..SweepGrid::default()
    };
    let rows = cmd_sweep(&cfg, &grid, dir.path()).unwrap();
    assert_eq!(rows.len(), 4);
    for i in 0..4 {
        assert!(dir.path().join(format!("cell-{i:03}.csv")).exists());
        assert!(dir.path().join(format!("cell-{i:03}.json")).exists());
    }
    let agg = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(agg.lines().next().unwrap(), SWEEP_HEADER.join(","));
    assert_eq!(agg.lines().count(), 5);
    for row in &rows {
        if row.cell.mode == UpdateMode::Paid {
            assert!(row.max_delta_s <= 1e-9);
        }
    }

    // Cells are independent of their neighbours.
    let single = SweepGrid { r: vec![4], mode: vec![UpdateMode::MagDirFree], ..SweepGrid::default() };
    let alone = cmd_sweep(&cfg, &single, &dir.path().join("alone")).unwrap();
    let twin = rows.iter().find(|r| r.cell.r == 4 && r.cell.mode == UpdateMode::MagDirFree).unwrap();
    assert_eq!(alone[0].mean_error, twin.mean_error);
}

fn paid_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_paid"))
}

#[test]
fn binary_exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(paid_bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(paid_bin().arg("frobnicate").output().unwrap().status.code(), Some(2));

    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"adapt": {"nope": 1}}"#).unwrap();
    let out = paid_bin()
        .args(["pretrain", "--out"])
        .arg(dir.path().join("x.ckpt"))
        .arg("--config")
        .arg(&bad_cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("adapt.nope"));

    let out = paid_bin().args(["pretrain", "--out", "/tmp/x.ckpt"]).env("PAID_SEED", "abc").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"PAIDCKPT but not really").unwrap();
    let out = paid_bin().args(["diagnose", "--ckpt-a"]).arg(&junk).arg("--ckpt-b").arg(&junk).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    let missing = paid_bin().args(["diagnose", "--ckpt-a", "/nonexistent", "--ckpt-b", "/nonexistent"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn binary_pretrain_honours_the_seed_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    std::fs::write(&cfg_path, serde_json::to_string(&tiny()).unwrap()).unwrap();
    let ckpt = dir.path().join("s.ckpt");
    let out = paid_bin()
        .args(["pretrain", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&ckpt)
        .env("PAID_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(sidecar(&ckpt)).unwrap()).unwrap();
    assert_eq!(meta["pretrain"]["seed"], 9);
    assert_eq!(meta["config"]["seeds"], serde_json::json!([9]));

    let out = paid_bin().args(["gradcheck", "--sizes", "4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst"));
}
