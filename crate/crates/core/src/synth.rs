//! Seeded synthetic capture scenes.
//!
//! A scene holds a ground-truth motion built from band-limited joint-angle
//! trajectories, a monocular camera, a ring of reference cameras, noisy 2D
//! detections with confidences for every camera, and an unsynchronized
//! re-performance of the motion (time-warped with a small per-joint offset).

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{silhouette_points, Camera, CapsuleBody};
use crate::error::{Error, Result};
use crate::motion::{build_motion_map, time_warp, FrameObservations, MotionMap};
use crate::skeleton::{canonicalize, Axis, Joint, Region, SkeletalPose, SkeletonModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkeletonChoice {
    Standard15,
    Toy5,
}

impl SkeletonChoice {
    pub fn build(self) -> SkeletonModel {
        match self {
            SkeletonChoice::Standard15 => SkeletonModel::standard15(),
            SkeletonChoice::Toy5 => SkeletonModel::toy5(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    /// Sum of up to four sinusoids per joint angle plus a smooth root path.
    Sinusoidal,
    /// One random pose held for every frame.
    Static,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub frames: usize,
    pub skeleton: SkeletonChoice,
    pub views: usize,
    /// Isotropic keypoint noise, pixels.
    pub noise_px: f64,
    /// Fraction of joint-frames marked occluded.
    pub occlusion: f64,
    pub seed: u64,
    pub motion: MotionKind,
    pub fps: f64,
    pub focal: f64,
    pub image_size: [f64; 2],
    pub silhouette_points: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            frames: 120,
            skeleton: SkeletonChoice::Standard15,
            views: 4,
            noise_px: 5.0,
            occlusion: 0.2,
            seed: 42,
            motion: MotionKind::Sinusoidal,
            fps: 30.0,
            focal: 1000.0,
            image_size: [1000.0, 1000.0],
            silhouette_points: 32,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid(format!("scene needs T >= 2, got {}", self.frames)));
        }
        if self.views < 2 {
            return Err(Error::invalid(format!("scene needs at least 2 reference views, got {}", self.views)));
        }
        if !(self.noise_px >= 0.0 && self.noise_px.is_finite()) {
            return Err(Error::invalid(format!("noise must be >= 0, got {}", self.noise_px)));
        }
        if !(0.0..1.0).contains(&self.occlusion) {
            return Err(Error::invalid(format!("occlusion rate must be in [0, 1), got {}", self.occlusion)));
        }
        if !(self.fps > 0.0 && self.focal > 0.0) {
            return Err(Error::invalid("fps and focal length must be positive"));
        }
        if self.silhouette_points < 8 {
            return Err(Error::invalid("silhouette needs at least 8 points"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub skeleton: SkeletonModel,
    pub body: CapsuleBody,
    pub gt_motion: MotionMap,
    pub mono_camera: Camera,
    pub sparse_cameras: Vec<Camera>,
    pub mono_obs: Vec<FrameObservations>,
    /// `V x T`.
    pub sparse_obs: Vec<Vec<FrameObservations>>,
    /// Time-warped re-performance; its length generally differs from T.
    pub marker_ref: MotionMap,
    /// `T x N` occlusion flags of the monocular detections.
    pub mono_occluded: Vec<bool>,
}

/// Where the subject stands; cameras aim here.
const SUBJECT_CENTER: [f64; 3] = [0.0, 0.9, 0.0];
const PELVIS_HEIGHT: f64 = 0.95;

struct Sinusoid {
    amp: f64,
    freq: f64,
    phase: f64,
}

fn band_limited(rng: &mut ChaCha8Rng, budget: f64, max_terms: usize) -> Vec<Sinusoid> {
    let k = rng.random_range(1..=max_terms);
    let mut terms: Vec<Sinusoid> = (0..k)
        .map(|_| Sinusoid {
            amp: rng.random_range(0.2..1.0),
            freq: rng.random_range(0.1..0.8),
            phase: rng.random_range(0.0..TAU),
        })
        .collect();
    let total: f64 = terms.iter().map(|s| s.amp).sum();
    let scale = budget * rng.random_range(0.4..1.0) / total;
    for s in &mut terms {
        s.amp *= scale;
    }
    terms
}

fn evaluate(terms: &[Sinusoid], time: f64) -> f64 {
    terms.iter().map(|s| s.amp * (TAU * s.freq * time + s.phase).sin()).sum()
}

fn ground_truth_poses(cfg: &SceneConfig, skeleton: &SkeletonModel, rng: &mut ChaCha8Rng) -> Vec<SkeletalPose> {
    let angle_tracks: Vec<(f64, Vec<Sinusoid>)> = skeleton
        .limits()
        .iter()
        .map(|&[lo, hi]| {
            let center = lo + (hi - lo) * (0.5 + rng.random_range(-0.15..0.15));
            let margin = 0.9 * (center - lo).min(hi - center);
            (center, band_limited(rng, margin, 4))
        })
        .collect();
    let yaw0 = rng.random_range(-0.3..0.3);
    let yaw = band_limited(rng, 0.5, 2);
    let pitch = band_limited(rng, 0.12, 2);
    let roll = band_limited(rng, 0.08, 2);
    let path_x = band_limited(rng, 0.4, 2);
    let path_z = band_limited(rng, 0.4, 2);
    let bob = band_limited(rng, 0.03, 1);

    let dt = 1.0 / cfg.fps;
    (0..cfg.frames)
        .map(|t| {
            let time = match cfg.motion {
                MotionKind::Sinusoidal => t as f64 * dt,
                MotionKind::Static => 0.0,
            };
            let theta = angle_tracks.iter().map(|(c, s)| c + evaluate(s, time)).collect();
            let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw0 + evaluate(&yaw, time))
                * Rotation3::from_axis_angle(&Vector3::x_axis(), evaluate(&pitch, time))
                * Rotation3::from_axis_angle(&Vector3::z_axis(), evaluate(&roll, time));
            SkeletalPose {
                theta,
                root_rot: rot.scaled_axis(),
                root_trans: Vector3::new(
                    evaluate(&path_x, time),
                    PELVIS_HEIGHT + evaluate(&bob, time),
                    evaluate(&path_z, time),
                ),
            }
        })
        .collect()
}

fn scene_cameras(cfg: &SceneConfig) -> Result<(Camera, Vec<Camera>)> {
    let target = Vector3::from(SUBJECT_CENTER);
    let [w, h] = cfg.image_size;
    let mono = Camera::look_at(Vector3::new(0.3, 1.2, 4.0), target, Vector3::y(), cfg.focal, w / 2.0, h / 2.0)?;
    let sparse = (0..cfg.views)
        .map(|k| {
            let phi = PI / 4.0 + TAU * k as f64 / cfg.views as f64;
            let eye = Vector3::new(4.0 * phi.sin(), 1.4, 4.0 * phi.cos());
            Camera::look_at(eye, target, Vector3::y(), cfg.focal, w / 2.0, h / 2.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((mono, sparse))
}

fn gaussian2(rng: &mut ChaCha8Rng, sigma: f64) -> Vector2<f64> {
    let x: f64 = StandardNormal.sample(rng);
    let y: f64 = StandardNormal.sample(rng);
    Vector2::new(x, y) * sigma
}

/// Detections of one camera over all frames, plus occlusion flags.
fn observe(
    cfg: &SceneConfig,
    skeleton: &SkeletonModel,
    body: &CapsuleBody,
    camera: &Camera,
    poses: &[SkeletalPose],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<FrameObservations>, Vec<bool>)> {
    let sigma = cfg.noise_px;
    let mut occluded_flags = Vec::with_capacity(poses.len() * skeleton.num_joints());
    let mut frames = Vec::with_capacity(poses.len());
    for pose in poses {
        let positions = skeleton.forward_kinematics(pose)?;
        let mut keypoints = Vec::with_capacity(positions.len());
        let mut conf = Vec::with_capacity(positions.len());
        for p in &positions {
            let noise = gaussian2(rng, sigma);
            let occluded = rng.random::<f64>() < cfg.occlusion;
            let eps: f64 = rng.random_range(0.0..0.3);
            let extra_dir: f64 = rng.random_range(0.0..TAU);
            let low_conf: f64 = rng.random_range(0.0..0.3);
            occluded_flags.push(occluded);
            let Ok(uv) = camera.project(p) else {
                keypoints.push(Vector2::new(camera.cx, camera.cy));
                conf.push(0.0);
                continue;
            };
            if occluded {
                keypoints.push(uv + noise + Vector2::new(extra_dir.cos(), extra_dir.sin()) * (3.0 * sigma));
                conf.push(low_conf);
            } else {
                let rel = if sigma > 0.0 { noise.norm() / (3.0 * sigma) } else { 0.0 };
                keypoints.push(uv + noise);
                conf.push((1.0 - rel + eps).clamp(0.0, 1.0));
            }
        }
        let silhouette = match silhouette_points(camera, skeleton, pose, body, cfg.silhouette_points) {
            Ok(pts) => pts.into_iter().map(|p| p + gaussian2(rng, sigma)).collect(),
            Err(Error::EmptySilhouette) => Vec::new(),
            Err(e) => return Err(e),
        };
        frames.push(FrameObservations {
            keypoints,
            conf,
            silhouette,
        });
    }
    Ok((frames, occluded_flags))
}

/// Strictly increasing warp from `[0, target_len)` onto `[0, source_len - 1]`
/// whose local rate deviates from uniform by at most 20%.
pub fn random_warp(rng: &mut ChaCha8Rng, source_len: usize, target_len: usize) -> Vec<f64> {
    let last = (source_len - 1) as f64;
    let span = (target_len - 1) as f64;
    let base = last / span;
    let k = rng.random_range(1..=3) as f64;
    let amp = rng.random_range(0.5..1.0) * 0.2 * base * span / (PI * k);
    let mut warp: Vec<f64> = (0..target_len)
        .map(|s| {
            let s = s as f64;
            (base * s + amp * (PI * k * s / span).sin()).clamp(0.0, last)
        })
        .collect();
    warp[0] = 0.0;
    warp[target_len - 1] = last;
    warp
}

fn re_performance(gt: &MotionMap, rng: &mut ChaCha8Rng) -> Result<MotionMap> {
    let frames = gt.frames();
    let target = ((frames as f64 * rng.random_range(0.85..1.15)).round() as usize).max(2);
    let warp = random_warp(rng, frames, target);
    let warped = time_warp(gt, &warp)?;
    let offsets: Vec<UnitQuaternion<f64>> = (0..gt.n_joints())
        .map(|_| {
            let axis = Vector3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            )
            .normalize();
            let angle = rng.random_range(0.0..2f64.to_radians());
            UnitQuaternion::from_scaled_axis(axis * angle)
        })
        .collect();
    let mut quats = Vec::with_capacity(warped.quats().len());
    for t in 0..warped.frames() {
        for (q, off) in warped.quat_pose(t).quats.iter().zip(&offsets) {
            let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3])) * off;
            quats.extend_from_slice(&canonicalize([uq.w, uq.i, uq.j, uq.k]));
        }
    }
    warped.with_quats(quats)
}

pub fn synth_generate(cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let skeleton = cfg.skeleton.build();
    let body = CapsuleBody::from_bone_lengths(&skeleton);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poses = ground_truth_poses(cfg, &skeleton, &mut rng);
    let gt_motion = build_motion_map(&poses, &skeleton, &vec![1.0; cfg.frames * skeleton.num_joints()])?;
    let (mono_camera, sparse_cameras) = scene_cameras(cfg)?;
    let (mono_obs, mono_occluded) = observe(cfg, &skeleton, &body, &mono_camera, &poses, &mut rng)?;
    let sparse_obs = sparse_cameras
        .iter()
        .map(|cam| observe(cfg, &skeleton, &body, cam, &poses, &mut rng).map(|o| o.0))
        .collect::<Result<Vec<_>>>()?;
    let marker_ref = re_performance(&gt_motion, &mut rng)?;
    Ok(SyntheticScene {
        config: cfg.clone(),
        skeleton,
        body,
        gt_motion,
        mono_camera,
        sparse_cameras,
        mono_obs,
        sparse_obs,
        marker_ref,
        mono_occluded,
    })
}

/// Random valid kinematic tree with `n` joints, for property tests.
pub fn random_skeleton(rng: &mut impl Rng, n: usize) -> SkeletonModel {
    let axes = [Axis::X, Axis::Y, Axis::Z];
    let mut joints = vec![Joint::new("j0", None, [0.0; 3], &[])];
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let offset = [
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        ];
        let mut dof: Vec<(Axis, f64, f64)> = Vec::new();
        for &ax in &axes {
            if rng.random_bool(0.6) {
                let lo = rng.random_range(-1.4..0.0);
                let hi = rng.random_range(0.0..1.4);
                dof.push((ax, lo, hi));
            }
        }
        joints.push(Joint::new(&format!("j{i}"), Some(parent), offset, &dof));
    }
    let regions = (0..n).map(|_| Region::ALL[rng.random_range(0..5)]).collect();
    SkeletonModel::new(joints, regions).expect("generated tree is valid")
}

/// Uniform random pose strictly inside the joint limits.
pub fn random_pose(rng: &mut impl Rng, skeleton: &SkeletonModel) -> SkeletalPose {
    SkeletalPose {
        theta: skeleton
            .limits()
            .iter()
            .map(|&[lo, hi]| lo + (hi - lo) * rng.random_range(0.01..0.99))
            .collect(),
        root_rot: Vector3::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        ),
        root_trans: Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneConfig {
        SceneConfig {
            frames: 20,
            seed,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn noiseless_observations_are_exact_projections() {
        let cfg = SceneConfig {
            noise_px: 0.0,
            occlusion: 0.0,
            ..small(3)
        };
        let scene = synth_generate(&cfg).unwrap();
        let poses = scene.gt_motion.extract_poses(&scene.skeleton).unwrap();
        for (pose, obs) in poses.iter().zip(&scene.mono_obs) {
            let pos = scene.skeleton.forward_kinematics(pose).unwrap();
            for (p, k) in pos.iter().zip(&obs.keypoints) {
                assert!((scene.mono_camera.project(p).unwrap() - k).norm() < 1e-9);
            }
            assert!(obs.conf.iter().all(|&c| c == 1.0));
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = synth_generate(&small(11)).unwrap();
        let b = synth_generate(&small(11)).unwrap();
        assert_eq!(a.gt_motion.to_json(), b.gt_motion.to_json());
        assert_eq!(a.marker_ref.to_json(), b.marker_ref.to_json());
        assert_eq!(a.mono_obs, b.mono_obs);
        assert_eq!(a.sparse_obs, b.sparse_obs);
        let c = synth_generate(&small(12)).unwrap();
        assert_ne!(a.gt_motion, c.gt_motion);
    }

    #[test]
    fn occlusion_count_is_binomial() {
        let cfg = SceneConfig {
            frames: 100,
            occlusion: 0.2,
            ..small(5)
        };
        let scene = synth_generate(&cfg).unwrap();
        let count = scene.mono_occluded.iter().filter(|&&o| o).count() as f64;
        let trials = 1500.0;
        let sd = (trials * 0.2 * 0.8f64).sqrt();
        assert!((count - 300.0).abs() <= 3.0 * sd, "count {count}");
    }

    #[test]
    fn ground_truth_respects_limits() {
        for seed in 0..5 {
            let scene = synth_generate(&small(seed)).unwrap();
            let limits = scene.skeleton.limits();
            // Poses are rebuilt through the quaternion map, which clamps;
            // compare against the raw generator instead.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for pose in ground_truth_poses(&scene.config, &scene.skeleton, &mut rng) {
                for (t, [lo, hi]) in pose.theta.iter().zip(&limits) {
                    assert!(t > lo && t < hi);
                }
            }
        }
    }

    #[test]
    fn marker_reference_keeps_bone_lengths() {
        let scene = synth_generate(&small(8)).unwrap();
        let sk = &scene.skeleton;
        let bone_lengths = |m: &MotionMap| -> Vec<Vec<f64>> {
            m.extract_poses(sk)
                .unwrap()
                .iter()
                .map(|p| {
                    let pos = sk.forward_kinematics(p).unwrap();
                    sk.edges().iter().map(|&(a, b)| (pos[a] - pos[b]).norm()).collect()
                })
                .collect()
        };
        let reference = bone_lengths(&scene.gt_motion)[0].clone();
        for frame in bone_lengths(&scene.gt_motion).iter().chain(&bone_lengths(&scene.marker_ref)) {
            for (a, b) in frame.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warp_is_monotone_within_rate_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(10..200);
            let m = rng.random_range(10..200);
            let w = random_warp(&mut rng, n, m);
            let base = (n - 1) as f64 / (m - 1) as f64;
            assert_eq!(w[0], 0.0);
            assert_eq!(w[m - 1], (n - 1) as f64);
            for pair in w.windows(2) {
                let rate = pair[1] - pair[0];
                assert!(rate > 0.0);
                assert!((rate / base - 1.0).abs() <= 0.2 + 1e-9);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(synth_generate(&SceneConfig { frames: 1, ..small(0) }).is_err());
        assert!(synth_generate(&SceneConfig { views: 1, ..small(0) }).is_err());
        assert!(synth_generate(&SceneConfig { noise_px: -1.0, ..small(0) }).is_err());
        assert!(synth_generate(&SceneConfig { occlusion: 1.0, ..small(0) }).is_err());
    }

    #[test]
    fn static_motion_holds_one_pose() {
        let scene = synth_generate(&SceneConfig {
            motion: MotionKind::Static,
            ..small(4)
        })
        .unwrap();
        for t in 1..scene.gt_motion.frames() {
            assert_eq!(scene.gt_motion.quat_row(t), scene.gt_motion.quat_row(0));
        }
    }
}
