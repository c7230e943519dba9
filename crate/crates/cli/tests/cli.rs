//! The `mocap` binary on a small five-joint scene.

use std::path::Path;
use std::process::{Command, Output};

use mocap_cli::pipeline::{GT_MOTION, HYBRID_MOTION, INIT_MOTION, PLOT_DATA, REFINED_MOTION, REPORT, SKELETON};
use mocap_cli::{evaluate, EvalReport};
use mocap_core::{MotionMap, SkeletonModel};

const FRAMES: usize = 24;

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "format": "pipeline/1",
        "seed": 7,
        "scene": { "frames": FRAMES, "skeleton": "toy5", "views": 2 },
        "train": { "epochs": 3, "batch": 2 }
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn mocap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocap")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_a_report_that_the_artifacts_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let res = mocap(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let report = EvalReport::from_json(&std::fs::read_to_string(out.join(REPORT)).unwrap()).unwrap();
    let names: Vec<&str> = report.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, ["init", "hybrid", "refined"]);
    assert_eq!(report.miou, "n/a");
    for st in &report.stages {
        assert_eq!(st.per_frame_mpjpe_mm.len(), FRAMES);
        assert!(st.mpjpe_mm >= 0.0 && (0.0..=100.0).contains(&st.pck_0_5) && (0.0..=100.0).contains(&st.pck_0_3));
    }

    // the report is a pure function of the files on disk
    let sk = SkeletonModel::load(&out.join(SKELETON)).unwrap();
    let gt = MotionMap::load(&out.join(GT_MOTION)).unwrap();
    let motions: Vec<MotionMap> = [INIT_MOTION, HYBRID_MOTION, REFINED_MOTION]
        .iter()
        .map(|f| MotionMap::load(&out.join(f)).unwrap())
        .collect();
    let stages: Vec<(&str, &MotionMap)> = ["init", "hybrid", "refined"].into_iter().zip(&motions).collect();
    assert_eq!(evaluate(&stages, &gt, &sk).unwrap(), report);

    let mut rows = csv::Reader::from_path(out.join(PLOT_DATA)).unwrap();
    assert_eq!(rows.headers().unwrap(), vec!["frame", "stage", "mpjpe_mm"]);
    let records: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 3 * FRAMES);
    for stage in ["init", "hybrid", "refined"] {
        assert_eq!(records.iter().filter(|r| &r[1] == stage).count(), FRAMES);
    }
}

#[test]
fn skip_train_with_a_checkpoint_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let ckpt = dir.path().join("net.json");
    let first = dir.path().join("a");
    let res = mocap(&["run", "--config", s(&cfg), "--out", s(&first), "--checkpoint", s(&ckpt)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(ckpt.exists());

    let mut refined = Vec::new();
    for name in ["b", "c"] {
        let out = dir.path().join(name);
        let res = mocap(&["run", "--config", s(&cfg), "--out", s(&out), "--skip-train", "--checkpoint", s(&ckpt)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        assert!(!out.join("checkpoint.json").exists());
        refined.push(std::fs::read(out.join(REFINED_MOTION)).unwrap());
    }
    assert_eq!(refined[0], refined[1]);
    assert_eq!(refined[0], std::fs::read(first.join(REFINED_MOTION)).unwrap());
}

#[test]
fn missing_skeleton_exits_with_an_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_skeleton.json");
    let cfg = dir.path().join("config.json");
    let doc = serde_json::json!({ "format": "pipeline/1", "paths": { "skeleton": missing } });
    std::fs::write(&cfg, doc.to_string()).unwrap();
    for cmd in ["fit", "run"] {
        let res = mocap(&[cmd, "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
        assert_eq!(res.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&res.stderr).contains(s(&missing)), "{cmd}");
    }
}

#[test]
fn bad_configs_exit_with_an_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"format": "pipeline/9"}"#).unwrap();
    assert_eq!(mocap(&["synth", "--config", s(&cfg)]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"format": "pipeline/1", "train": {"epochs": 0}}"#).unwrap();
    assert_eq!(mocap(&["synth", "--config", s(&cfg)]).status.code(), Some(2));
    assert_eq!(mocap(&["synth", "--config", s(&dir.path().join("absent.json"))]).status.code(), Some(2));
}

#[test]
fn a_failed_run_keeps_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    // a checkpoint for a different joint count makes inference fail after
    // the scene and the initial fit were written
    let arch = mocap_net::Architecture {
        n_joints: 3,
        regions: vec![0, 1, 2],
        ..mocap_net::Architecture::for_skeleton(&SkeletonModel::toy5())
    };
    let ckpt = dir.path().join("wrong.json");
    mocap_net::save_checkpoint(
        &ckpt,
        &mocap_net::GeneratorParams::zeros(&arch).unwrap(),
        &mocap_net::DiscriminatorParams::zeros(&arch).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = mocap(&["run", "--config", s(&cfg), "--out", s(&out), "--skip-train", "--checkpoint", s(&ckpt)]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("init_motion.json.partial").exists());
    assert!(out.join("gt_motion.json.partial").exists());
    assert!(!out.join(INIT_MOTION).exists());
    assert!(!out.join(REPORT).exists());
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    for cmd in ["synth", "fit", "sparse-fit", "train", "infer", "refine", "eval"] {
        let res = mocap(&[cmd, "--config", s(&cfg), "--out", s(&out)]);
        assert!(res.status.success(), "{cmd}: {}", String::from_utf8_lossy(&res.stderr));
    }
    let report = EvalReport::from_json(&std::fs::read_to_string(out.join(REPORT)).unwrap()).unwrap();
    assert_eq!(report.stages.len(), 3);
}

#[test]
fn eval_before_any_fit_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    assert!(mocap(&["synth", "--config", s(&cfg), "--out", s(&out)]).status.success());
    assert_eq!(mocap(&["eval", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn the_seed_flag_changes_the_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(mocap(&["synth", "--config", s(&cfg), "--out", s(&a), "--seed", "1"]).status.success());
    assert!(mocap(&["synth", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]).status.success());
    assert_ne!(std::fs::read(a.join(GT_MOTION)).unwrap(), std::fs::read(b.join(GT_MOTION)).unwrap());
}
