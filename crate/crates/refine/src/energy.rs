//! Scalar energies over a pose sequence.
//!
//! Pose distances are taken in the stacked parameter space
//! `[theta, root axis-angle, root translation]`, radians and metres mixed.

use mocap_core::camera::OutlineSample;
use mocap_core::{Camera, CapsuleBody, Error as CoreError, FrameObservations, MotionMap, SkeletalPose, SkeletonModel};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{RefineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyWeights {
    pub lambda_2d: f64,
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub conf_threshold: f64,
    /// Per-joint weights of the network anchor; `None` is all ones.
    pub anchor_joint_weights: Option<Vec<f64>>,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            lambda_2d: 1.0,
            lambda_t: 20.0,
            lambda_s: 0.3,
            conf_threshold: 0.8,
            anchor_joint_weights: None,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self, skeleton: Option<&SkeletonModel>) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.lambda_2d) && ok(self.lambda_t) && ok(self.lambda_s)) {
            return Err(RefineError::InvalidInput("energy weights must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(RefineError::InvalidInput(format!(
                "confidence threshold {} outside [0, 1]",
                self.conf_threshold
            )));
        }
        if let Some(w) = &self.anchor_joint_weights {
            if !w.iter().all(|&v| ok(v)) {
                return Err(RefineError::InvalidInput("anchor joint weights must be finite and >= 0".into()));
            }
            if let Some(s) = skeleton {
                if w.len() != s.num_joints() {
                    return Err(RefineError::InvalidInput(format!(
                        "{} anchor weights for {} joints",
                        w.len(),
                        s.num_joints()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Weight of every pose parameter derived from per-joint weights.
pub(crate) fn param_weights(skeleton: &SkeletonModel, joint_weights: Option<&[f64]>) -> Vec<f64> {
    let mut w: Vec<f64> = match joint_weights {
        Some(jw) => skeleton.dof_owner().iter().map(|&j| jw[j]).collect(),
        None => vec![1.0; skeleton.total_dof()],
    };
    let root = joint_weights.map_or(1.0, |jw| jw[0]);
    w.extend([root; 6]);
    w
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(RefineError::InvalidInput(format!("{what}: expected {want} frames, got {got}")));
    }
    Ok(())
}

/// `M(Q_t, trans_t)` for every frame.
pub fn network_targets(net: &MotionMap, trans: &[Vector3<f64>], skeleton: &SkeletonModel) -> Result<Vec<SkeletalPose>> {
    check_len("translations", trans.len(), net.frames())?;
    if net.n_joints() != skeleton.num_joints() {
        return Err(RefineError::InvalidInput(format!(
            "motion has {} joints, skeleton {}",
            net.n_joints(),
            skeleton.num_joints()
        )));
    }
    (0..net.frames())
        .map(|t| Ok(skeleton.quat_to_pose(&net.quat_pose(t), trans[t])?))
        .collect()
}

pub fn energy_3d(
    seq: &[SkeletalPose],
    net: &MotionMap,
    trans: &[Vector3<f64>],
    skeleton: &SkeletonModel,
    joint_weights: Option<&[f64]>,
) -> Result<f64> {
    check_len("pose sequence", seq.len(), net.frames())?;
    if let Some(w) = joint_weights {
        if w.len() != skeleton.num_joints() {
            return Err(RefineError::InvalidInput("one anchor weight per joint required".into()));
        }
    }
    let targets = network_targets(net, trans, skeleton)?;
    let w = param_weights(skeleton, joint_weights);
    let mut e = 0.0;
    for (s, m) in seq.iter().zip(&targets) {
        for ((a, b), wi) in s.to_params().iter().zip(m.to_params()).zip(&w) {
            e += wi * (a - b) * (a - b);
        }
    }
    Ok(e)
}

/// Offset charged per coordinate for a keypoint or outline that cannot be
/// projected.
pub(crate) fn unprojectable(camera: &Camera) -> Vector2<f64> {
    Vector2::new(camera.fx, camera.fy)
}

/// Joints whose confidence passes the threshold.
pub(crate) fn confident(obs: &FrameObservations, threshold: f64) -> Vec<usize> {
    obs.conf
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= threshold)
        .map(|(i, _)| i)
        .collect()
}

pub fn energy_2d(
    seq: &[SkeletalPose],
    obs: &[FrameObservations],
    camera: &Camera,
    skeleton: &SkeletonModel,
    threshold: f64,
) -> Result<f64> {
    check_len("observations", obs.len(), seq.len())?;
    let mut total = 0.0;
    for (pose, o) in seq.iter().zip(obs) {
        o.validate(skeleton.num_joints())?;
        let set = confident(o, threshold);
        if set.is_empty() {
            continue;
        }
        let positions = skeleton.forward_kinematics(pose)?;
        let mut frame = 0.0;
        for &i in &set {
            let d = match camera.project(&positions[i]) {
                Ok(uv) => uv - o.keypoints[i],
                Err(CoreError::BehindCamera { .. }) => unprojectable(camera),
                Err(e) => return Err(e.into()),
            };
            frame += d.norm_squared();
        }
        total += frame / set.len() as f64;
    }
    Ok(total / seq.len() as f64)
}

/// Mean of [`energy_2d`] over views.
pub fn energy_2d_views(
    seq: &[SkeletalPose],
    views: &[Vec<FrameObservations>],
    cameras: &[Camera],
    skeleton: &SkeletonModel,
    threshold: f64,
) -> Result<f64> {
    if views.is_empty() || views.len() != cameras.len() {
        return Err(RefineError::InvalidInput(format!(
            "{} observation views for {} cameras",
            views.len(),
            cameras.len()
        )));
    }
    let mut e = 0.0;
    for (o, c) in views.iter().zip(cameras) {
        e += energy_2d(seq, o, c, skeleton, threshold)?;
    }
    Ok(e / views.len() as f64)
}

/// Squared differences of adjacent network poses.
pub fn energy_temporal(net: &MotionMap, trans: &[Vector3<f64>], skeleton: &SkeletonModel) -> Result<f64> {
    Ok(pose_temporal(&network_targets(net, trans, skeleton)?))
}

/// `sum_t |S_t - S_{t+1}|^2` over a pose sequence.
pub fn pose_temporal(seq: &[SkeletalPose]) -> f64 {
    seq.windows(2)
        .map(|w| {
            w[0].to_params()
                .iter()
                .zip(w[1].to_params())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Nearest point of `set` to `p`; `set` must be non-empty.
pub(crate) fn nearest(p: &Vector2<f64>, set: &[Vector2<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, q) in set.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Symmetric chamfer: the two directed mean squared nearest distances, averaged.
pub fn chamfer(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let directed = |from: &[Vector2<f64>], to: &[Vector2<f64>]| {
        from.iter().map(|p| (p - to[nearest(p, to)]).norm_squared()).sum::<f64>() / from.len() as f64
    };
    0.5 * (directed(a, b) + directed(b, a))
}

/// Fewest observed outline points for which the silhouette term is used.
pub const MIN_SILHOUETTE_POINTS: usize = 8;

/// Model outline sampled with as many points as were observed, or `None`
/// when nothing of the body projects.
pub(crate) fn model_outline(
    camera: &Camera,
    skeleton: &SkeletonModel,
    pose: &SkeletalPose,
    body: &CapsuleBody,
    n: usize,
) -> Result<Option<Vec<OutlineSample>>> {
    match mocap_core::camera::silhouette_samples(camera, skeleton, pose, body, n) {
        Ok(p) => Ok(Some(p)),
        Err(CoreError::EmptySilhouette) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn energy_silhouette(
    seq: &[SkeletalPose],
    obs: &[FrameObservations],
    camera: &Camera,
    skeleton: &SkeletonModel,
    body: &CapsuleBody,
) -> Result<f64> {
    check_len("observations", obs.len(), seq.len())?;
    let mut total = 0.0;
    for (pose, o) in seq.iter().zip(obs) {
        let n = o.silhouette.len();
        if n < MIN_SILHOUETTE_POINTS {
            continue;
        }
        total += match model_outline(camera, skeleton, pose, body, n)? {
            Some(model) => chamfer(&o.silhouette, &model.iter().map(|m| m.point).collect::<Vec<_>>()),
            None => unprojectable(camera).norm_squared(),
        };
    }
    Ok(total / seq.len() as f64)
}

/// Everything a refinement stage sees.
#[derive(Clone, Copy)]
pub struct Scene<'a> {
    pub skeleton: &'a SkeletonModel,
    pub camera: &'a Camera,
    pub obs: &'a [FrameObservations],
    pub body: &'a CapsuleBody,
}

/// Full refinement objective: network anchor (at the sequence's own
/// translations), weighted reprojection, pose smoothness and silhouette.
pub fn total_energy(seq: &[SkeletalPose], net: &MotionMap, scene: Scene<'_>, weights: &EnergyWeights) -> Result<f64> {
    let trans: Vec<Vector3<f64>> = seq.iter().map(|s| s.root_trans).collect();
    let mut e = energy_3d(seq, net, &trans, scene.skeleton, weights.anchor_joint_weights.as_deref())?;
    e += weights.lambda_2d * energy_2d(seq, scene.obs, scene.camera, scene.skeleton, weights.conf_threshold)?;
    e += weights.lambda_t * pose_temporal(seq);
    if weights.lambda_s > 0.0 {
        e += weights.lambda_s * energy_silhouette(seq, scene.obs, scene.camera, scene.skeleton, scene.body)?;
    }
    Ok(e)
}
