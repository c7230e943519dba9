//! Keypoint-only fits and the two-stage refinement schedule.

use log::debug;
use mocap_core::motion::build_motion_map;
use mocap_core::{Camera, CapsuleBody, FrameObservations, MotionMap, Region, SkeletalPose, SkeletonModel};
use nalgebra::{Matrix3, Rotation3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use crate::energy::{confident, network_targets, total_energy, EnergyWeights, Scene};
use crate::error::{RefineError, Result};
use crate::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions, LmReport};
use crate::problem::{FreeParams, SequenceProblem, ViewTerm};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub weights: EnergyWeights,
    pub lm: LmOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    pub weights: EnergyWeights,
    pub lm: LmOptions,
    /// How many times the translation/pose pair is run.
    pub flipflop_rounds: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            weights: EnergyWeights::default(),
            lm: LmOptions::default(),
            flipflop_rounds: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefineOutput {
    pub motion: MotionMap,
    pub poses: Vec<SkeletalPose>,
    /// Refinement objective at the initial motion and at the output.
    pub initial_energy: f64,
    pub final_energy: f64,
    pub reports: Vec<LmReport>,
}

/// Rest pose, pulled at least 15% into every joint range so the bounded
/// parameterization does not start on its flat tails.
fn rest_pose(skeleton: &SkeletonModel) -> SkeletalPose {
    let mut pose = SkeletalPose::identity(skeleton);
    for (t, [lo, hi]) in pose.theta.iter_mut().zip(skeleton.limits()) {
        let margin = 0.15 * (hi - lo);
        *t = t.clamp(lo + margin, hi - margin);
    }
    pose
}

/// Root translation placing the rest pose's confident joints on their
/// detections, solved linearly from the pinhole equations of every view.
fn root_from_keypoints(
    skeleton: &SkeletonModel,
    rest: &[Vector3<f64>],
    views: &[ViewTerm<'_>],
    t: usize,
    threshold: f64,
) -> Option<Vector3<f64>> {
    let torso: Vec<bool> = skeleton.regions().iter().map(|r| *r == Region::Torso).collect();
    let picks: Vec<Vec<usize>> = views.iter().map(|v| confident(&v.obs[t], threshold)).collect();
    let n_torso: usize = picks.iter().map(|p| p.iter().filter(|&&i| torso[i]).count()).sum();
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    let mut rows = 0;
    for (v, pick) in views.iter().zip(&picks) {
        let cam = v.camera;
        let r = cam.rotation;
        for &i in pick {
            if n_torso >= 2 && !torso[i] {
                continue;
            }
            let a = r * rest[i] + cam.translation;
            let kp = v.obs[t].keypoints[i];
            let eqs = [
                (cam.fx, kp.x - cam.cx, 0usize),
                (cam.fy, kp.y - cam.cy, 1usize),
            ];
            for (f, off, axis) in eqs {
                let row: RowVector3<f64> = r.row(axis) * f - r.row(2) * off;
                let rhs = off * a.z - f * a[axis];
                ata += row.transpose() * row;
                atb += row.transpose() * rhs;
                rows += 1;
            }
        }
    }
    if rows < 3 {
        return None;
    }
    let root = ata.lu().solve(&atb)?;
    let ahead = views
        .iter()
        .all(|v| v.camera.to_camera(&root).z > mocap_core::camera::MIN_DEPTH);
    (root.iter().all(|x| x.is_finite()) && ahead).then_some(root)
}

/// Per-frame root guesses; frames without usable detections borrow the
/// nearest frame that has one.
fn initial_roots(
    skeleton: &SkeletonModel,
    views: &[ViewTerm<'_>],
    frames: usize,
    threshold: f64,
) -> Result<Vec<Vector3<f64>>> {
    let rest = skeleton.forward_kinematics(&rest_pose(skeleton))?;
    let solved: Vec<Option<Vector3<f64>>> = (0..frames)
        .map(|t| root_from_keypoints(skeleton, &rest, views, t, threshold))
        .collect();
    let have: Vec<usize> = (0..frames).filter(|&t| solved[t].is_some()).collect();
    if have.is_empty() {
        return Err(RefineError::Unfittable(
            "no frame has enough confident keypoints to place the root".into(),
        ));
    }
    Ok((0..frames)
        .map(|t| {
            let near = *have.iter().min_by_key(|&&s| s.abs_diff(t)).expect("non-empty");
            solved[near].expect("filtered")
        })
        .collect())
}

fn fit_views(views: Vec<ViewTerm<'_>>, skeleton: &SkeletonModel, opts: &FitOptions) -> Result<MotionMap> {
    opts.weights.validate(Some(skeleton))?;
    let frames = views[0].obs.len();
    if frames < 2 {
        return Err(RefineError::InvalidInput(format!("need at least 2 frames, got {frames}")));
    }
    for v in &views {
        if v.obs.len() != frames {
            return Err(RefineError::InvalidInput("views disagree on the frame count".into()));
        }
        for o in v.obs {
            o.validate(skeleton.num_joints())?;
        }
    }
    let w = &opts.weights;
    let roots = initial_roots(skeleton, &views, frames, w.conf_threshold)?;

    let n_views = views.len();
    let mut conf = vec![0.0; frames * skeleton.num_joints()];
    for v in &views {
        for (t, o) in v.obs.iter().enumerate() {
            for (j, c) in o.conf.iter().enumerate() {
                conf[t * skeleton.num_joints() + j] += c;
            }
        }
    }
    if n_views > 1 {
        conf.iter_mut().for_each(|c| *c /= n_views as f64);
    }

    let support: Vec<usize> = (0..frames)
        .map(|t| views.iter().map(|v| confident(&v.obs[t], w.conf_threshold).len()).sum())
        .collect();
    // tracking starts from the best-observed frame and runs both ways
    let first = (0..frames).rev().max_by_key(|&t| support[t]).expect("frames exist");
    let tracker = Tracker {
        skeleton,
        views: &views,
        // one frame of the sequence objective, same relative weights
        lambda_2d: w.lambda_2d / frames as f64,
        opts,
    };
    let mut poses = vec![SkeletalPose::identity(skeleton); frames];
    poses[first] = tracker.first_frame(first, roots[first])?;
    for t in first + 1..frames {
        poses[t] = if support[t] > 0 { tracker.follow(t, &poses[t - 1])? } else { poses[t - 1].clone() };
    }
    for t in (0..first).rev() {
        poses[t] = if support[t] > 0 { tracker.follow(t, &poses[t + 1])? } else { poses[t + 1].clone() };
    }

    let problem = SequenceProblem::new(skeleton, FreeParams::All, poses.clone())?
        .with_views(views, w.lambda_2d, w.conf_threshold)?
        .with_temporal(w.lambda_t);
    let report = levenberg_marquardt(&problem, &problem.encode(&poses)?, &opts.lm)?;
    debug!(
        "keypoint fit: cost {:.6e} -> {:.6e} in {} iterations ({:?})",
        report.initial_cost, report.final_cost, report.iterations, report.status
    );
    Ok(build_motion_map(&problem.decode(&report.x), skeleton, &conf)?)
}

/// Single-frame fits used to build the starting sequence.
struct Tracker<'a, 'v> {
    skeleton: &'a SkeletonModel,
    views: &'a [ViewTerm<'v>],
    lambda_2d: f64,
    opts: &'a FitOptions,
}

impl Tracker<'_, '_> {
    fn frame_views(&self, t: usize) -> Vec<ViewTerm<'_>> {
        self.views
            .iter()
            .map(|v| ViewTerm {
                camera: v.camera,
                obs: &v.obs[t..t + 1],
            })
            .collect()
    }

    fn solve(&self, problem: &SequenceProblem<'_>, start: &SkeletalPose) -> Result<(SkeletalPose, f64)> {
        let report = levenberg_marquardt(problem, &problem.encode(std::slice::from_ref(start))?, &self.opts.lm)?;
        Ok((problem.decode(&report.x).remove(0), report.final_cost))
    }

    /// Several root orientations, each fitted with keypoints entering by tree
    /// depth (the root's children first); the best reprojection wins.
    fn first_frame(&self, t: usize, root: Vector3<f64>) -> Result<SkeletalPose> {
        let w = &self.opts.weights;
        let depth = joint_depths(self.skeleton);
        let max_depth = depth.iter().copied().max().unwrap_or(1).max(1);
        let rest = rest_pose(self.skeleton);
        let mut best: Option<(SkeletalPose, f64)> = None;
        for (k, pitch) in (0..ROOT_HEADINGS).flat_map(|k| ROOT_PITCHES.map(|p| (k, p))) {
            let yaw = std::f64::consts::TAU * k as f64 / ROOT_HEADINGS as f64;
            let rot = Rotation3::from_axis_angle(&Vector3::x_axis(), pitch) * Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
            let mut pose = SkeletalPose {
                root_rot: rot.scaled_axis(),
                root_trans: root,
                ..rest.clone()
            };
            let mut cost = f64::INFINITY;
            for level in 1..=max_depth {
                let keep: Vec<bool> = depth.iter().map(|&d| d <= level).collect();
                let problem = SequenceProblem::new(self.skeleton, FreeParams::All, vec![pose.clone()])?
                    .with_views(self.frame_views(t), self.lambda_2d, w.conf_threshold)?
                    .restrict_joints(&keep);
                (pose, cost) = self.solve(&problem, &pose)?;
                // the joints this level first constrains get a few fresh starts
                for j in (0..depth.len()).filter(|&j| depth[j] + 1 == level) {
                    for start in self.restarts(&problem, &pose, j)? {
                        let (p, c) = self.solve(&problem, &start)?;
                        if c < cost {
                            (pose, cost) = (p, c);
                        }
                    }
                }
            }
            if best.as_ref().is_none_or(|b| cost < b.1) {
                best = Some((pose, cost));
            }
        }
        Ok(best.expect("at least one heading").0)
    }

    /// The best few grid points over joint `j`'s angles, ranked by the cost
    /// before any solving.
    fn restarts(&self, problem: &SequenceProblem<'_>, pose: &SkeletalPose, j: usize) -> Result<Vec<SkeletalPose>> {
        let range = self.skeleton.dof_range(j);
        if range.is_empty() {
            return Ok(Vec::new());
        }
        let limits = self.skeleton.limits();
        let n = range.len();
        let mut scored = Vec::new();
        for code in 0..RESTART_GRID.pow(n as u32) {
            let mut cand = pose.clone();
            let mut c = code;
            for k in range.clone() {
                let [lo, hi] = limits[k];
                cand.theta[k] = lo + (hi - lo) * (c % RESTART_GRID + 1) as f64 / (RESTART_GRID + 1) as f64;
                c /= RESTART_GRID;
            }
            let r = problem.residuals(&problem.encode(std::slice::from_ref(&cand))?)?;
            scored.push((r.iter().map(|v| v * v).sum::<f64>(), cand));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(scored.into_iter().take(RESTARTS_KEPT).map(|s| s.1).collect())
    }

    /// Fit of frame `t` starting from, and held near, its neighbour.
    fn follow(&self, t: usize, prev: &SkeletalPose) -> Result<SkeletalPose> {
        let w = &self.opts.weights;
        let problem = SequenceProblem::new(self.skeleton, FreeParams::All, vec![prev.clone()])?
            .with_views(self.frame_views(t), self.lambda_2d, w.conf_threshold)?
            .with_prior(vec![prev.clone()], w.lambda_t)?;
        Ok(self.solve(&problem, prev)?.0)
    }
}

/// Starting headings, and forward/backward leans, tried on the first frame.
const ROOT_HEADINGS: usize = 4;
const ROOT_PITCHES: [f64; 3] = [0.0, -0.4, 0.4];
/// Grid points per angle, and how many grid starts are solved, per joint.
const RESTART_GRID: usize = 3;
const RESTARTS_KEPT: usize = 2;

fn joint_depths(skeleton: &SkeletonModel) -> Vec<usize> {
    let mut depth = vec![0; skeleton.num_joints()];
    for (j, joint) in skeleton.joints().iter().enumerate() {
        if let Some(p) = joint.parent {
            depth[j] = depth[p] + 1;
        }
    }
    depth
}

/// Monocular keypoint fit; the output carries the detection confidences.
pub fn initial_fit(
    obs: &[FrameObservations],
    camera: &Camera,
    skeleton: &SkeletonModel,
    opts: &FitOptions,
) -> Result<MotionMap> {
    fit_views(vec![ViewTerm { camera, obs }], skeleton, opts)
}

/// Multi-view keypoint fit; confidences are averaged over views.
pub fn sparse_view_fit(
    multi_obs: &[Vec<FrameObservations>],
    cameras: &[Camera],
    skeleton: &SkeletonModel,
    opts: &FitOptions,
) -> Result<MotionMap> {
    if multi_obs.is_empty() || multi_obs.len() != cameras.len() {
        return Err(RefineError::InvalidInput(format!(
            "{} observation views for {} cameras",
            multi_obs.len(),
            cameras.len()
        )));
    }
    let views = multi_obs
        .iter()
        .zip(cameras)
        .map(|(obs, camera)| ViewTerm { camera, obs })
        .collect();
    fit_views(views, skeleton, opts)
}

/// Translation-only stage: `base` stays fixed except for its root
/// translations, fitted under reprojection plus smoothness.
pub fn refine_translations(
    base: &[SkeletalPose],
    obs: &[FrameObservations],
    camera: &Camera,
    skeleton: &SkeletonModel,
    weights: &EnergyWeights,
    lm: &LmOptions,
) -> Result<(Vec<SkeletalPose>, LmReport)> {
    let problem = SequenceProblem::new(skeleton, FreeParams::TranslationOnly, base.to_vec())?
        .with_views(vec![ViewTerm { camera, obs }], weights.lambda_2d, weights.conf_threshold)?
        .with_temporal(weights.lambda_t);
    let report = levenberg_marquardt(&problem, &problem.encode(base)?, lm)?;
    Ok((problem.decode(&report.x), report))
}

pub fn refine(
    init: &MotionMap,
    net: &MotionMap,
    obs: &[FrameObservations],
    camera: &Camera,
    skeleton: &SkeletonModel,
    body: &CapsuleBody,
    opts: &RefineOptions,
) -> Result<RefineOutput> {
    let w = &opts.weights;
    w.validate(Some(skeleton))?;
    let frames = init.frames();
    if net.frames() != frames || obs.len() != frames {
        return Err(RefineError::InvalidInput(format!(
            "frame counts disagree: init {frames}, network {}, observations {}",
            net.frames(),
            obs.len()
        )));
    }
    if init.n_joints() != skeleton.num_joints() || net.n_joints() != skeleton.num_joints() {
        return Err(RefineError::InvalidInput("motion joint count does not match skeleton".into()));
    }
    if opts.flipflop_rounds == 0 {
        return Err(RefineError::InvalidInput("flipflop_rounds must be at least 1".into()));
    }
    let scene = Scene {
        skeleton,
        camera,
        obs,
        body,
    };
    let init_poses = init.extract_poses(skeleton)?;
    let init_trans: Vec<Vector3<f64>> = init_poses.iter().map(|p| p.root_trans).collect();
    let targets = network_targets(net, &init_trans, skeleton)?;
    let initial_energy = total_energy(&init_poses, net, scene, w)?;

    let mut current = init_poses;
    let mut current_energy = initial_energy;
    let mut reports = Vec::new();
    for round in 0..opts.flipflop_rounds {
        // Stage 1: translations only, rotations held at the network's (first
        // round) or the current estimate (later rounds).
        let base: Vec<SkeletalPose> = if round == 0 {
            targets
                .iter()
                .zip(&current)
                .map(|(m, s)| SkeletalPose {
                    root_trans: s.root_trans,
                    ..m.clone()
                })
                .collect()
        } else {
            current.clone()
        };
        let (stage1, r1) = refine_translations(&base, obs, camera, skeleton, w, &opts.lm)?;
        debug!("stage 1 round {round}: {:.6e} -> {:.6e}", r1.initial_cost, r1.final_cost);
        reports.push(r1);
        let stage1_energy = total_energy(&stage1, net, scene, w)?;
        let start = if stage1_energy <= current_energy { stage1 } else { current.clone() };

        // Stage 2: full poses under the complete objective.
        let problem = SequenceProblem::new(skeleton, FreeParams::All, start.clone())?
            .with_anchor(targets.clone(), w.anchor_joint_weights.as_deref())?
            .with_views(vec![ViewTerm { camera, obs }], w.lambda_2d, w.conf_threshold)?
            .with_temporal(w.lambda_t)
            .with_silhouette(camera, obs, body, w.lambda_s)?;
        let r2 = levenberg_marquardt(&problem, &problem.encode(&start)?, &opts.lm)?;
        debug!("stage 2 round {round}: {:.6e} -> {:.6e} ({:?})", r2.initial_cost, r2.final_cost, r2.status);
        current = problem.decode(&r2.x);
        current_energy = total_energy(&current, net, scene, w)?;
        reports.push(r2);
    }
    let motion = build_motion_map(&current, skeleton, init.conf())?;
    Ok(RefineOutput {
        motion,
        poses: current,
        initial_energy,
        final_energy: current_energy,
        reports,
    })
}
