//! The stages behind each subcommand. Every stage reads its inputs from the
//! output directory and writes its results there, so stages can be run one
//! at a time or chained by [`run`].

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mocap_core::motion::{load_observations, save_observations};
use mocap_core::synth::synth_generate;
use mocap_core::{Camera, CapsuleBody, FrameObservations, MotionMap, SceneConfig, SkeletonModel, SyntheticScene};
use mocap_net::{correct_motion, load_checkpoint, save_checkpoint, train as train_net, Architecture, Trained, TrainingPair};
use mocap_refine::{initial_fit, refine as refine_motion, sparse_view_fit};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::report::{evaluate, EvalReport, STAGES};

pub const SKELETON: &str = "skeleton.json";
pub const GT_MOTION: &str = "gt_motion.json";
pub const MONO_CAMERA: &str = "mono_camera.json";
pub const MONO_OBS: &str = "mono_obs.json";
pub const MARKER_REF: &str = "marker_ref.json";
pub const INIT_MOTION: &str = "init_motion.json";
pub const SPARSE_MOTION: &str = "sparse_motion.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const HISTORY: &str = "train_history.json";
pub const HYBRID_MOTION: &str = "hybrid_motion.json";
pub const REFINED_MOTION: &str = "refined_motion.json";
pub const REPORT: &str = "report.json";
pub const PLOT_DATA: &str = "per_frame_mpjpe.csv";

pub fn sparse_camera(v: usize) -> String {
    format!("sparse_camera_{v}.json")
}

pub fn sparse_obs(v: usize) -> String {
    format!("sparse_obs_{v}.json")
}

/// Output directory plus the list of files written into it, so a failed
/// run can flag what it left behind.
pub struct Workspace {
    out: PathBuf,
    written: Vec<PathBuf>,
}

impl Workspace {
    pub fn create(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        Ok(Workspace {
            out: out.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn record(&mut self, path: PathBuf) {
        if !self.written.contains(&path) {
            self.written.push(path);
        }
    }

    fn save_motion(&mut self, name: &str, m: &MotionMap) -> Result<()> {
        let path = self.path(name);
        m.save(&path)?;
        self.record(path);
        Ok(())
    }

    fn save_text(&mut self, path: PathBuf, text: &str) -> Result<()> {
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.record(path);
        Ok(())
    }

    /// Renames every file written so far to `<name>.partial`.
    pub fn mark_partial(&mut self) -> Vec<PathBuf> {
        let mut moved = Vec::new();
        for p in self.written.drain(..) {
            let mut target = p.clone().into_os_string();
            target.push(".partial");
            let target = PathBuf::from(target);
            if std::fs::rename(&p, &target).is_ok() {
                moved.push(target);
            }
        }
        moved
    }
}

fn load_motion(ws: &Workspace, name: &str) -> Result<MotionMap> {
    Ok(MotionMap::load(&ws.path(name))?)
}

pub fn load_skeleton(cfg: &PipelineConfig, ws: &Workspace) -> Result<SkeletonModel> {
    let path = cfg.paths.skeleton.clone().unwrap_or_else(|| ws.path(SKELETON));
    Ok(SkeletonModel::load(&path)?)
}

fn checkpoint_path(cfg: &PipelineConfig, ws: &Workspace) -> PathBuf {
    cfg.paths.checkpoint.clone().unwrap_or_else(|| ws.path(CHECKPOINT))
}

pub fn synth(cfg: &PipelineConfig, ws: &mut Workspace) -> Result<SyntheticScene> {
    let scene = synth_generate(&cfg.scene)?;
    let n = scene.skeleton.num_joints();
    let path = ws.path(SKELETON);
    ws.save_text(path, &scene.skeleton.to_json())?;
    ws.save_motion(GT_MOTION, &scene.gt_motion)?;
    ws.save_motion(MARKER_REF, &scene.marker_ref)?;
    let path = ws.path(MONO_CAMERA);
    ws.save_text(path, &scene.mono_camera.to_json())?;
    save_obs(ws, MONO_OBS, &scene.mono_obs, n)?;
    for (v, (cam, obs)) in scene.sparse_cameras.iter().zip(&scene.sparse_obs).enumerate() {
        let path = ws.path(&sparse_camera(v));
        ws.save_text(path, &cam.to_json())?;
        save_obs(ws, &sparse_obs(v), obs, n)?;
    }
    info!("synth: {} frames, {n} joints, {} reference views", scene.gt_motion.frames(), scene.sparse_cameras.len());
    Ok(scene)
}

fn save_obs(ws: &mut Workspace, name: &str, obs: &[FrameObservations], n: usize) -> Result<()> {
    let path = ws.path(name);
    save_observations(&path, obs, n)?;
    ws.record(path);
    Ok(())
}

pub fn fit(cfg: &PipelineConfig, ws: &mut Workspace) -> Result<MotionMap> {
    let skeleton = load_skeleton(cfg, ws)?;
    let camera = Camera::load(&ws.path(MONO_CAMERA))?;
    let obs = load_observations(&ws.path(MONO_OBS))?;
    let start = Instant::now();
    let init = initial_fit(&obs, &camera, &skeleton, &cfg.fit)?;
    info!("fit: monocular initialization in {:.1?}", start.elapsed());
    ws.save_motion(INIT_MOTION, &init)?;
    Ok(init)
}

pub fn sparse_fit(cfg: &PipelineConfig, ws: &mut Workspace) -> Result<MotionMap> {
    let skeleton = load_skeleton(cfg, ws)?;
    let mut cameras = Vec::new();
    let mut obs = Vec::new();
    for v in 0..cfg.scene.views {
        cameras.push(Camera::load(&ws.path(&sparse_camera(v)))?);
        obs.push(load_observations(&ws.path(&sparse_obs(v)))?);
    }
    let start = Instant::now();
    let m = sparse_view_fit(&obs, &cameras, &skeleton, &cfg.fit)?;
    info!("sparse-fit: {} views in {:.1?}", cameras.len(), start.elapsed());
    ws.save_motion(SPARSE_MOTION, &m)?;
    Ok(m)
}

/// Cuts aligned windows out of a (network input, reference) pair.
pub fn windows(input: &MotionMap, target: &MotionMap, window: usize, stride: usize) -> Result<Vec<TrainingPair>> {
    let frames = input.frames();
    if target.frames() != frames {
        return Err(CliError::Config(format!(
            "training input has {frames} frames but its reference {}",
            target.frames()
        )));
    }
    let window = window.min(frames);
    let mut out = Vec::new();
    let mut s = 0;
    while s + window <= frames {
        out.push(TrainingPair {
            input: input.window(s, window)?,
            target: target.window(s, window)?,
        });
        s += stride;
    }
    Ok(out)
}

/// Paired windows (monocular fit, sparse-view fit) and unpaired
/// marker-style references: the scene's own, then those of any extra
/// scenes.
pub fn training_data(cfg: &PipelineConfig, ws: &Workspace, skeleton: &SkeletonModel) -> Result<(Vec<TrainingPair>, Vec<MotionMap>)> {
    let ts = &cfg.training_set;
    let input = load_motion(ws, INIT_MOTION)?;
    let target = load_motion(ws, SPARSE_MOTION)?;
    let marker = load_motion(ws, MARKER_REF)?;
    // the discriminator compares against windows of the same length, and a
    // re-performance can be shorter than the scene
    let window = if cfg.train.adversarial { ts.window.min(marker.frames()) } else { ts.window };
    let mut pairs = windows(&input, &target, window, ts.stride)?;
    let mut unpaired = vec![marker];
    for k in 1..=ts.extra_scenes {
        let scene = synth_generate(&SceneConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..cfg.scene.clone()
        })?;
        if scene.skeleton.num_joints() != skeleton.num_joints() {
            return Err(CliError::Config(format!(
                "skeleton has {} joints but the scene generator uses {}",
                skeleton.num_joints(),
                scene.skeleton.num_joints()
            )));
        }
        let start = Instant::now();
        let input = initial_fit(&scene.mono_obs, &scene.mono_camera, skeleton, &cfg.fit)?;
        let target = sparse_view_fit(&scene.sparse_obs, &scene.sparse_cameras, skeleton, &cfg.fit)?;
        pairs.extend(windows(&input, &target, window, ts.stride)?);
        unpaired.push(scene.marker_ref);
        info!("extra training scene {k}/{}: fitted in {:.1?}", ts.extra_scenes, start.elapsed());
    }
    Ok((pairs, unpaired))
}

pub fn train(cfg: &PipelineConfig, ws: &mut Workspace) -> Result<Trained> {
    let skeleton = load_skeleton(cfg, ws)?;
    let (pairs, unpaired) = training_data(cfg, ws, &skeleton)?;
    let start = Instant::now();
    let trained = train_net(&Architecture::for_skeleton(&skeleton), &pairs, &unpaired, &cfg.train)?;
    if let (Some(first), Some(last)) = (trained.history.epochs.first(), trained.history.epochs.last()) {
        info!(
            "train: {} windows, {} epochs in {:.1?}; L_sv {:.4} -> {:.4}",
            pairs.len(),
            cfg.train.epochs,
            start.elapsed(),
            first.loss_sv,
            last.loss_sv
        );
    }
    let path = checkpoint_path(cfg, ws);
    save_checkpoint(&path, &trained.generator, &trained.discriminator)?;
    ws.record(path);
    let path = ws.path(HISTORY);
    ws.save_text(path, &serde_json::to_string_pretty(&trained.history).expect("history serializes"))?;
    Ok(trained)
}

pub fn infer(cfg: &PipelineConfig, ws: &mut Workspace) -> Result<MotionMap> {
    let (gen, _) = load_checkpoint(&checkpoint_path(cfg, ws))?;
    let init = load_motion(ws, INIT_MOTION)?;
    let hybrid = correct_motion(&gen, &init)?;
    ws.save_motion(HYBRID_MOTION, &hybrid)?;
    Ok(hybrid)
}

pub fn refine(cfg: &PipelineConfig, ws: &mut Workspace) -> Result<MotionMap> {
    let skeleton = load_skeleton(cfg, ws)?;
    let init = load_motion(ws, INIT_MOTION)?;
    let hybrid = load_motion(ws, HYBRID_MOTION)?;
    let camera = Camera::load(&ws.path(MONO_CAMERA))?;
    let obs = load_observations(&ws.path(MONO_OBS))?;
    let body = CapsuleBody::from_bone_lengths(&skeleton);
    let start = Instant::now();
    let out = refine_motion(&init, &hybrid, &obs, &camera, &skeleton, &body, &cfg.refine)?;
    info!(
        "refine: energy {:.4} -> {:.4} in {:.1?}",
        out.initial_energy,
        out.final_energy,
        start.elapsed()
    );
    ws.save_motion(REFINED_MOTION, &out.motion)?;
    Ok(out.motion)
}

/// Scores whichever stage outputs exist against the ground truth.
pub fn eval(cfg: &PipelineConfig, ws: &mut Workspace) -> Result<EvalReport> {
    let skeleton = load_skeleton(cfg, ws)?;
    let gt = load_motion(ws, GT_MOTION)?;
    let files = [INIT_MOTION, HYBRID_MOTION, REFINED_MOTION];
    let mut motions = Vec::new();
    for (stage, file) in STAGES.iter().zip(files) {
        let path = ws.path(file);
        if path.exists() {
            motions.push((*stage, MotionMap::load(&path)?));
        }
    }
    if motions.is_empty() {
        return Err(CliError::Config(format!("no stage output to evaluate in {}", ws.out.display())));
    }
    let stages: Vec<(&str, &MotionMap)> = motions.iter().map(|(s, m)| (*s, m)).collect();
    let report = evaluate(&stages, &gt, &skeleton)?;
    for s in &report.stages {
        info!(
            "eval {:>7}: MPJPE {:.1} mm, PCK@0.5 {:.1}%, PCK@0.3 {:.1}%",
            s.stage, s.mpjpe_mm, s.pck_0_5, s.pck_0_3
        );
    }
    let path = ws.path(REPORT);
    ws.save_text(path, &report.to_json())?;
    let path = ws.path(PLOT_DATA);
    report.write_csv(&path)?;
    ws.record(path);
    Ok(report)
}

/// The whole loop. With `skip_train` the generator comes from the
/// configured checkpoint instead of being trained.
pub fn run(cfg: &PipelineConfig, ws: &mut Workspace, skip_train: bool) -> Result<EvalReport> {
    if skip_train && cfg.paths.checkpoint.is_none() {
        return Err(CliError::Config("--skip-train needs a checkpoint path".into()));
    }
    if let Some(path) = &cfg.paths.skeleton {
        // fail before any work if the skeleton is missing
        SkeletonModel::load(path)?;
    }
    synth(cfg, ws)?;
    fit(cfg, ws)?;
    if !skip_train {
        sparse_fit(cfg, ws)?;
        train(cfg, ws)?;
    }
    infer(cfg, ws)?;
    refine(cfg, ws)?;
    eval(cfg, ws)
}
