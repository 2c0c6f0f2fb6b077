use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vqflow::checkpoint::{digest, load_checkpoint};
use vqflow::cli::InspectSummary;
use vqflow::config::RunConfig;
use vqflow::report::{parse_p5, ReportJson};
use vqflow_core::model::{build_model, Components};

const SMALL: &[&str] = &[
    "--set", "data.channels=[8, 16, 32]",
    "--set", "data.size=16",
    "--set", "data.train=40",
    "--set", "data.test=20",
    "--set", "data.patch_min=2",
    "--set", "data.patch_max=6",
];

const FAST: &[&str] = &["--set", "model.blocks=2", "--set", "model.k_cp=4"];

fn vqflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = vqflow(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["synth", "--classes", "4", "--seed", seed, "--out", p(&data)];
    args.extend_from_slice(SMALL);
    ok(&args);
    data
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--data", p(data), "--out", p(out)];
    args.extend_from_slice(FAST);
    args.extend_from_slice(extra);
    ok(&args);
    out.join("checkpoint.vqck")
}

fn digests(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), digest(&std::fs::read(&path).unwrap())));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_reproducible_and_validated() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = synth(a.path(), "7");
    let db = synth(b.path(), "7");
    let (ga, gb) = (digests(&da), digests(&db));
    assert_eq!(ga, gb);
    assert_eq!(ga.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "vqft")).count(), 60);
    assert!(da.join("manifest.txt").exists() && da.join("config.toml").exists());

    let out = vqflow(&["synth", "--classes", "1", "--out", p(&a.path().join("bad"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 classes"));
}

#[test]
fn ablation_flags_select_components() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "1");
    let full = load_checkpoint(&train(&data, &dir.path().join("full"), &["--epochs", "1"])).unwrap();
    assert_eq!(full.config().components, Components::ablation(6).unwrap());
    let id2 = load_checkpoint(&train(&data, &dir.path().join("id2"), &["--epochs", "1", "--no-cadm", "--no-cspc"])).unwrap();
    assert_eq!(id2.config().components, Components::ablation(2).unwrap());
    let base = load_checkpoint(&train(
        &data,
        &dir.path().join("id0"),
        &["--epochs", "1", "--no-cadm", "--no-cpc", "--no-cspc", "--no-pe"],
    ))
    .unwrap();
    assert_eq!(base.config().components, Components::BASELINE);
    let csv = std::fs::read_to_string(dir.path().join("full/loss.csv")).unwrap();
    assert!(csv.starts_with("step,L_f1,L_f2,L_f3,L_Qcp,L_Qcsp1,L_Qcsp2,L_Qcsp3,total\n"));
    assert_eq!(csv.lines().count(), 1 + 3);
}

#[test]
fn zero_epochs_emit_the_initialized_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "2");
    let m = load_checkpoint(&train(&data, &dir.path().join("run"), &["--epochs", "0"])).unwrap();
    assert!(m.codebooks_seeded());
    let fresh = build_model::<f32>(m.config()).unwrap();
    for (name, (a, b)) in m.params().names().iter().zip(m.params().values().iter().zip(fresh.params().values())) {
        if !name.ends_with("codewords") {
            assert_eq!(a, b, "{name}");
        }
    }
    let csv = std::fs::read_to_string(dir.path().join("run/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn resolved_config_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "3");
    let first = train(&data, &dir.path().join("a"), &["--epochs", "2", "--seed", "5"]);
    let resolved = dir.path().join("a/config.toml");
    let cfg = RunConfig::load(&std::fs::read_to_string(&resolved).unwrap(), &[]).unwrap();
    assert_eq!(cfg.train.seed, 5);
    assert_eq!(cfg.model.blocks, Some(2));
    let second = dir.path().join("b");
    ok(&["train", "--data", p(&data), "--out", p(&second), "--config", p(&resolved)]);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(second.join("checkpoint.vqck")).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a/loss.csv")).unwrap(),
        std::fs::read(second.join("loss.csv")).unwrap()
    );
}

#[test]
fn eval_reports_scores_usage_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "4");
    let ck = train(&data, &dir.path().join("run"), &["--epochs", "2"]);
    let out = dir.path().join("eval");
    ok(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&out), "--dump-maps"]);
    let r = ReportJson::read(&out.join("report.json")).unwrap();
    assert!((0.0..=1.0).contains(&r.detection_auroc));
    assert!(r.localization_auroc.is_some());
    assert_eq!(r.density, "dedicated");
    assert_eq!(r.prototype_usage.iter().sum::<u64>(), 20);
    assert_eq!(r.pattern_usage.len(), 3);
    assert_eq!(r.samples.len(), 20);
    let maps: Vec<_> = std::fs::read_dir(out.join("maps")).unwrap().collect();
    assert_eq!(maps.len(), 20);
    for s in &r.samples {
        let (w, h, _) = parse_p5(&std::fs::read(out.join(s.map.file.as_ref().unwrap())).unwrap()).unwrap();
        assert_eq!((w, h), (16, 16));
        assert!(s.map.min <= s.map.max);
    }

    let mix = dir.path().join("mix");
    ok(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&mix), "--density", "mixture"]);
    let m = ReportJson::read(&mix.join("report.json")).unwrap();
    assert_eq!(m.density, "mixture");
    assert!(m.samples.iter().all(|s| s.map.file.is_none()));
    assert!(m.samples.iter().zip(&r.samples).any(|(a, b)| a.score != b.score));
    assert!(!mix.join("maps").exists());
}

#[test]
fn score_writes_a_single_sample_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "5");
    let ck = train(&data, &dir.path().join("run"), &["--epochs", "1"]);
    let out = dir.path().join("score/s.json");
    let map = dir.path().join("score/s.pgm");
    ok(&["score", "--checkpoint", p(&ck), "--sample", p(&data.join("test/00000.vqft")), "--out", p(&out), "--map", p(&map)]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!(v["score"].as_f64().unwrap().is_finite());
    assert!(v["prototype"].as_u64().unwrap() < 4);
    assert_eq!(parse_p5(&std::fs::read(&map).unwrap()).unwrap().0, 16);

    let bad = vqflow(&["score", "--checkpoint", p(&data.join("manifest.txt")), "--sample", p(&data.join("test/00000.vqft")), "--out", p(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("format error at byte 0"));
}

fn inspect(ck: &Path, data: &Path, out: &Path) -> InspectSummary {
    ok(&["inspect", "--checkpoint", p(ck), "--data", p(data), "--out", p(out)]);
    serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn inspect_tables_untrained_and_trained() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "6");

    let ck0 = train(&data, &dir.path().join("init"), &["--epochs", "0"]);
    let s0 = inspect(&ck0, &data, &dir.path().join("i0"));
    let csv = std::fs::read_to_string(dir.path().join("i0/prototypes.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "prototype_id,usage,nearest_other_distance");
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(dir.path().join("i0/patterns1.csv").exists());
    let h = s0.assignment_entropy.unwrap();
    assert!(h >= 0.8 * s0.max_entropy.unwrap(), "entropy {h}");

    let ck = train(&data, &dir.path().join("trained"), &["--epochs", "5"]);
    let s = inspect(&ck, &data, &dir.path().join("i1"));
    for proto in s.per_prototype.iter().filter(|p| p.usage > 0) {
        assert!(proto.purity.unwrap() >= 0.9, "{proto:?}");
    }
    let table = std::fs::read_to_string(dir.path().join("i1/assignments.csv")).unwrap();
    assert!(table.starts_with("prototype_id,class_id,count\n"));
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = vqflow(&["synth", "--out", p(dir.path()), "--set", "data.colour=3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    let out = vqflow(&["synth", "--out", p(dir.path()), "--set", "nonsense"]);
    assert!(!out.status.success());
    let out = vqflow(&["train", "--data", p(&dir.path().join("missing")), "--out", p(dir.path())]);
    assert!(!out.status.success());
}
