//! Kinematic skeleton, forward kinematics and the pose <-> quaternion mapping.
//!
//! A pose is stored as stacked joint angles `theta` (one entry per declared
//! rotation axis), a root axis-angle rotation and a root translation. Every
//! non-root joint rotates about its declared axes in X, Y, Z order, so its
//! local rotation is `Rx(a) * Ry(b) * Rz(c)` restricted to the axes it has.

use std::ops::Range;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3xX, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SKELETON_FORMAT: &str = "skeleton/1";

/// Tolerance on `|q| - 1` accepted by [`SkeletonModel::quat_to_pose`].
pub const UNIT_QUAT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }

    pub fn rotation(self, angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        match self {
            Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        }
    }

    /// Angle `a` maximizing `trace(m * R_axis(a))`.
    fn best_angle(self, m: &Matrix3<f64>) -> f64 {
        match self {
            Axis::X => (m[(1, 2)] - m[(2, 1)]).atan2(m[(1, 1)] + m[(2, 2)]),
            Axis::Y => (m[(2, 0)] - m[(0, 2)]).atan2(m[(0, 0)] + m[(2, 2)]),
            Axis::Z => (m[(0, 1)] - m[(1, 0)]).atan2(m[(0, 0)] + m[(1, 1)]),
        }
    }
}

/// The five body regions used for local feature pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
    Torso,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::LeftArm,
        Region::RightArm,
        Region::LeftLeg,
        Region::RightLeg,
        Region::Torso,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint, expressed in the parent's frame.
    pub offset: Vector3<f64>,
    pub dof: Vec<Axis>,
    /// `[min, max]` per entry of `dof`, radians.
    pub limits: Vec<[f64; 2]>,
}

impl Joint {
    pub fn new(name: &str, parent: Option<usize>, offset: [f64; 3], dof: &[(Axis, f64, f64)]) -> Self {
        Joint {
            name: name.to_string(),
            parent,
            offset: Vector3::from(offset),
            dof: dof.iter().map(|d| d.0).collect(),
            limits: dof.iter().map(|d| [d.1, d.2]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonModel {
    joints: Vec<Joint>,
    regions: Vec<Region>,
    dof_start: Vec<usize>,
    total_dof: usize,
}

/// Joint angles plus root rotation (axis-angle) and root translation.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletalPose {
    pub theta: Vec<f64>,
    pub root_rot: Vector3<f64>,
    pub root_trans: Vector3<f64>,
}

/// One unit quaternion `(w, x, y, z)` per joint; joint 0 holds the root rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct QuatPose {
    pub quats: Vec<[f64; 4]>,
}

impl SkeletalPose {
    pub fn identity(skeleton: &SkeletonModel) -> Self {
        SkeletalPose {
            theta: vec![0.0; skeleton.total_dof()],
            root_rot: Vector3::zeros(),
            root_trans: Vector3::zeros(),
        }
    }

    /// Stacked parameter vector `[theta, root_rot, root_trans]`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta.len() + 6);
        out.extend_from_slice(&self.theta);
        out.extend(self.root_rot.iter());
        out.extend(self.root_trans.iter());
        out
    }

    pub fn from_params(params: &[f64]) -> Result<Self> {
        if params.len() < 6 {
            return Err(Error::invalid(format!(
                "pose parameter vector needs at least 6 entries, got {}",
                params.len()
            )));
        }
        let d = params.len() - 6;
        Ok(SkeletalPose {
            theta: params[..d].to_vec(),
            root_rot: Vector3::new(params[d], params[d + 1], params[d + 2]),
            root_trans: Vector3::new(params[d + 3], params[d + 4], params[d + 5]),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
            && self.root_rot.iter().all(|v| v.is_finite())
            && self.root_trans.iter().all(|v| v.is_finite())
    }
}

/// Flip `q` into the `w >= 0` hemisphere.
pub fn canonicalize(q: [f64; 4]) -> [f64; 4] {
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

pub fn quat_from_rotation(m: &Matrix3<f64>) -> [f64; 4] {
    let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
    canonicalize([uq.w, uq.i, uq.j, uq.k])
}

fn quat_array(uq: &UnitQuaternion<f64>) -> [f64; 4] {
    canonicalize([uq.w, uq.i, uq.j, uq.k])
}

/// Nearest product `R_a1(t1) * R_a2(t2) * ...` over the given ordered axes.
///
/// Starts from the XYZ Euler angles of `r` and refines with exact per-axis
/// coordinate ascent on `trace(R^T * product)`.
fn factor_rotation(r: &Matrix3<f64>, axes: &[Axis]) -> Vec<f64> {
    if axes.is_empty() {
        return Vec::new();
    }
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    let mut angles: Vec<f64> = axes
        .iter()
        .map(|ax| match ax {
            Axis::X => a,
            Axis::Y => b,
            Axis::Z => c,
        })
        .collect();
    if axes.len() == 3 {
        return angles;
    }
    let rt = r.transpose();
    for _ in 0..100 {
        let mut change = 0.0f64;
        for m in 0..axes.len() {
            let before = axes[..m]
                .iter()
                .zip(&angles[..m])
                .fold(Matrix3::<f64>::identity(), |acc, (ax, &t)| acc * ax.rotation(t));
            let after = axes[m + 1..]
                .iter()
                .zip(&angles[m + 1..])
                .fold(Matrix3::<f64>::identity(), |acc, (ax, &t)| acc * ax.rotation(t));
            let best = axes[m].best_angle(&(after * rt * before));
            change = change.max((best - angles[m]).abs());
            angles[m] = best;
        }
        if change < 1e-15 {
            break;
        }
    }
    angles
}

/// Left Jacobian of SO(3) at axis-angle `w`.
fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k: Matrix3<f64> = w.cross_matrix();
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::<f64>::identity() + k * a + k * k * b
}

/// Joint positions plus their derivatives w.r.t. the stacked pose parameters.
#[derive(Clone, Debug)]
pub struct FkJacobian {
    pub positions: Vec<Vector3<f64>>,
    /// One `3 x (total_dof + 6)` block per joint.
    pub jacobians: Vec<Matrix3xX<f64>>,
}

impl SkeletonModel {
    pub fn new(joints: Vec<Joint>, regions: Vec<Region>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::invalid("skeleton has no joints"));
        }
        if regions.len() != joints.len() {
            return Err(Error::invalid(format!(
                "region map has {} entries for {} joints",
                regions.len(),
                joints.len()
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::invalid("joint 0 must be the root")),
                (_, None) => {
                    return Err(Error::invalid(format!("joint {i} ({}) has no parent; only joint 0 may be the root", j.name)))
                }
                (_, Some(p)) if p >= i => {
                    return Err(Error::invalid(format!(
                        "joint {i} ({}) has parent {p}; parents must precede children",
                        j.name
                    )))
                }
                _ => {}
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("joint {i} ({}) has a non-finite offset", j.name)));
            }
            if j.limits.len() != j.dof.len() {
                return Err(Error::invalid(format!(
                    "joint {i} ({}) declares {} axes but {} limits",
                    j.name,
                    j.dof.len(),
                    j.limits.len()
                )));
            }
            if j.dof.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "joint {i} ({}) axes must be distinct and ordered X, Y, Z",
                    j.name
                )));
            }
            for &[lo, hi] in &j.limits {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::invalid(format!(
                        "joint {i} ({}) has invalid limits [{lo}, {hi}]",
                        j.name
                    )));
                }
                if lo < -std::f64::consts::PI || hi > std::f64::consts::PI {
                    return Err(Error::invalid(format!(
                        "joint {i} ({}) limits [{lo}, {hi}] exceed [-pi, pi]",
                        j.name
                    )));
                }
            }
        }
        let root = &joints[0];
        if !root.dof.is_empty() {
            return Err(Error::invalid("the root rotates through root_rot and must declare no axes"));
        }
        if root.offset != Vector3::zeros() {
            return Err(Error::invalid("root offset must be zero"));
        }
        let mut dof_start = Vec::with_capacity(joints.len() + 1);
        let mut acc = 0;
        for j in &joints {
            dof_start.push(acc);
            acc += j.dof.len();
        }
        dof_start.push(acc);
        Ok(SkeletonModel {
            joints,
            regions,
            dof_start,
            total_dof: acc,
        })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn total_dof(&self) -> usize {
        self.total_dof
    }

    /// Length of the stacked pose parameter vector.
    pub fn num_pose_params(&self) -> usize {
        self.total_dof + 6
    }

    /// Indices into `theta` owned by joint `j`.
    pub fn dof_range(&self, j: usize) -> Range<usize> {
        self.dof_start[j]..self.dof_start[j + 1]
    }

    /// Joint owning each entry of `theta`.
    pub fn dof_owner(&self) -> Vec<usize> {
        (0..self.num_joints())
            .flat_map(|j| self.dof_range(j).map(move |_| j))
            .collect()
    }

    /// `[min, max]` for every entry of `theta`, in order.
    pub fn limits(&self) -> Vec<[f64; 2]> {
        self.joints.iter().flat_map(|j| j.limits.iter().copied()).collect()
    }

    /// Kinematic tree edges `(parent, child)` ordered by child index.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.parent.map(|p| (p, i)))
            .collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    fn check_pose(&self, pose: &SkeletalPose) -> Result<()> {
        if pose.theta.len() != self.total_dof {
            return Err(Error::invalid(format!(
                "pose has {} joint angles, skeleton declares {}",
                pose.theta.len(),
                self.total_dof
            )));
        }
        Ok(())
    }

    pub fn local_rotation(&self, j: usize, theta: &[f64]) -> Matrix3<f64> {
        self.joints[j]
            .dof
            .iter()
            .zip(&theta[self.dof_range(j)])
            .fold(Matrix3::identity(), |acc, (ax, &t)| acc * ax.rotation(t))
    }

    /// World rotation and position of every joint.
    pub fn world_transforms(&self, pose: &SkeletalPose) -> Result<Vec<(Matrix3<f64>, Vector3<f64>)>> {
        self.check_pose(pose)?;
        let mut out: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::with_capacity(self.joints.len());
        let root = Rotation3::from_scaled_axis(pose.root_rot).into_inner();
        out.push((root, pose.root_trans));
        for j in 1..self.joints.len() {
            let joint = &self.joints[j];
            let (pr, pp) = out[joint.parent.expect("validated")];
            let pos = pp + pr * joint.offset;
            out.push((pr * self.local_rotation(j, &pose.theta), pos));
        }
        Ok(out)
    }

    pub fn forward_kinematics(&self, pose: &SkeletalPose) -> Result<Vec<Vector3<f64>>> {
        Ok(self.world_transforms(pose)?.into_iter().map(|(_, p)| p).collect())
    }

    /// Forward kinematics with analytic derivatives of every joint position.
    pub fn fk_jacobian(&self, pose: &SkeletalPose) -> Result<FkJacobian> {
        let xf = self.world_transforms(pose)?;
        let n = self.joints.len();
        let np = self.num_pose_params();
        let d = self.total_dof;
        let positions: Vec<Vector3<f64>> = xf.iter().map(|x| x.1).collect();

        // World axis of every angle entry, pivoting at its joint.
        let mut axes = vec![Vector3::zeros(); d];
        for k in 1..n {
            let joint = &self.joints[k];
            let mut frame = xf[joint.parent.expect("validated")].0;
            for (m, (ax, &t)) in joint.dof.iter().zip(&pose.theta[self.dof_range(k)]).enumerate() {
                axes[self.dof_start[k] + m] = frame * ax.unit();
                frame *= ax.rotation(t);
            }
        }
        let jl = so3_left_jacobian(&pose.root_rot);
        let mut jacobians = Vec::with_capacity(n);
        for j in 0..n {
            let mut jac = Matrix3xX::zeros(np);
            let mut k = self.joints[j].parent;
            while let Some(a) = k {
                let lever = positions[j] - positions[a];
                for col in self.dof_range(a) {
                    jac.set_column(col, &axes[col].cross(&lever));
                }
                k = self.joints[a].parent;
            }
            let rel = positions[j] - pose.root_trans;
            let drot = -rel.cross_matrix() * jl;
            jac.fixed_columns_mut::<3>(d).copy_from(&drot);
            jac.fixed_columns_mut::<3>(d + 3).copy_from(&Matrix3::identity());
            jacobians.push(jac);
        }
        Ok(FkJacobian { positions, jacobians })
    }

    pub fn pose_to_quat(&self, pose: &SkeletalPose) -> Result<QuatPose> {
        self.check_pose(pose)?;
        let mut quats = Vec::with_capacity(self.joints.len());
        quats.push(quat_array(&UnitQuaternion::from_scaled_axis(pose.root_rot)));
        for j in 1..self.joints.len() {
            quats.push(quat_from_rotation(&self.local_rotation(j, &pose.theta)));
        }
        Ok(QuatPose { quats })
    }

    /// The mapping from quaternions (plus root translation) to a limited pose.
    pub fn quat_to_pose(&self, quat: &QuatPose, root_trans: Vector3<f64>) -> Result<SkeletalPose> {
        if quat.quats.len() != self.joints.len() {
            return Err(Error::invalid(format!(
                "{} quaternions for {} joints",
                quat.quats.len(),
                self.joints.len()
            )));
        }
        for (j, q) in quat.quats.iter().enumerate() {
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= UNIT_QUAT_TOLERANCE) {
                return Err(Error::invalid(format!(
                    "quaternion of joint {j} has norm {norm}; normalize before mapping"
                )));
            }
        }
        let unit = |q: &[f64; 4]| {
            UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3]))
        };
        let root = unit(&canonicalize(quat.quats[0]));
        let mut theta = Vec::with_capacity(self.total_dof);
        for j in 1..self.joints.len() {
            let joint = &self.joints[j];
            if joint.dof.is_empty() {
                continue;
            }
            let r = unit(&quat.quats[j]).to_rotation_matrix().into_inner();
            let angles = factor_rotation(&r, &joint.dof);
            theta.extend(
                angles
                    .into_iter()
                    .zip(&joint.limits)
                    .map(|(a, &[lo, hi])| a.clamp(lo, hi)),
            );
        }
        Ok(SkeletalPose {
            theta,
            root_rot: root.scaled_axis(),
            root_trans,
        })
    }

    pub fn clamp_joint_limits(&self, pose: &SkeletalPose) -> Result<SkeletalPose> {
        self.check_pose(pose)?;
        let theta = pose
            .theta
            .iter()
            .zip(self.limits())
            .map(|(&t, [lo, hi])| t.clamp(lo, hi))
            .collect();
        Ok(SkeletalPose {
            theta,
            ..pose.clone()
        })
    }

    /// A 15-joint, 30-DOF body: pelvis root, neck, head, both arms and legs.
    ///
    /// Y is up and the rest pose faces +Z with the arms hanging down, so the
    /// subject's left is +X.
    pub fn standard15() -> Self {
        use Axis::*;
        let joints = vec![
            Joint::new("pelvis", None, [0.0, 0.0, 0.0], &[]),
            Joint::new("neck", Some(0), [0.0, 0.52, 0.0], &[(X, -0.5, 0.8), (Y, -0.6, 0.6), (Z, -0.4, 0.4)]),
            Joint::new("head", Some(1), [0.0, 0.22, 0.0], &[(X, -0.6, 0.6)]),
            Joint::new("l_shoulder", Some(1), [0.18, -0.02, 0.0], &[(X, -2.0, 0.8), (Y, -1.0, 1.0), (Z, -0.3, 1.5)]),
            Joint::new("l_elbow", Some(3), [0.0, -0.28, 0.0], &[(X, -2.4, 0.05), (Y, -1.0, 1.0)]),
            Joint::new("l_wrist", Some(4), [0.0, -0.25, 0.0], &[(X, -0.8, 0.8), (Z, -0.5, 0.5)]),
            Joint::new("r_shoulder", Some(1), [-0.18, -0.02, 0.0], &[(X, -2.0, 0.8), (Y, -1.0, 1.0), (Z, -1.5, 0.3)]),
            Joint::new("r_elbow", Some(6), [0.0, -0.28, 0.0], &[(X, -2.4, 0.05), (Y, -1.0, 1.0)]),
            Joint::new("r_wrist", Some(7), [0.0, -0.25, 0.0], &[(X, -0.8, 0.8), (Z, -0.5, 0.5)]),
            Joint::new("l_hip", Some(0), [0.1, -0.08, 0.0], &[(X, -1.6, 0.5), (Y, -0.6, 0.6), (Z, -0.3, 0.8)]),
            Joint::new("l_knee", Some(9), [0.0, -0.42, 0.0], &[(X, -0.05, 2.3), (Z, -0.1, 0.1)]),
            Joint::new("l_ankle", Some(10), [0.0, -0.42, 0.0], &[(X, -0.6, 0.6)]),
            Joint::new("r_hip", Some(0), [-0.1, -0.08, 0.0], &[(X, -1.6, 0.5), (Y, -0.6, 0.6), (Z, -0.8, 0.3)]),
            Joint::new("r_knee", Some(12), [0.0, -0.42, 0.0], &[(X, -0.05, 2.3), (Z, -0.1, 0.1)]),
            Joint::new("r_ankle", Some(13), [0.0, -0.42, 0.0], &[(X, -0.6, 0.6)]),
        ];
        use Region::*;
        let regions = vec![
            Torso, Torso, Torso, LeftArm, LeftArm, LeftArm, RightArm, RightArm, RightArm, LeftLeg,
            LeftLeg, LeftLeg, RightLeg, RightLeg, RightLeg,
        ];
        SkeletonModel::new(joints, regions).expect("bundled skeleton is valid")
    }

    /// A 5-joint toy rig (pelvis, spine, left arm chain, right arm).
    pub fn toy5() -> Self {
        use Axis::*;
        let joints = vec![
            Joint::new("pelvis", None, [0.0, 0.0, 0.0], &[]),
            Joint::new("spine", Some(0), [0.0, 0.5, 0.0], &[(X, -0.6, 0.6), (Z, -0.5, 0.5)]),
            Joint::new("l_arm", Some(1), [0.2, 0.0, 0.0], &[(X, -1.5, 0.5), (Z, -0.3, 1.2)]),
            Joint::new("l_hand", Some(2), [0.0, -0.5, 0.0], &[]),
            Joint::new("r_arm", Some(1), [-0.2, 0.0, 0.0], &[(X, -1.5, 0.5), (Z, -1.2, 0.3)]),
        ];
        use Region::*;
        let regions = vec![Torso, Torso, LeftArm, LeftArm, RightArm];
        SkeletonModel::new(joints, regions).expect("bundled skeleton is valid")
    }

    /// Torso anchor joints used for depth initialization and PCK scaling.
    pub fn torso_pair(&self) -> (usize, usize) {
        let neck = self
            .joint_index("neck")
            .or_else(|| self.joint_index("spine"))
            .unwrap_or_else(|| self.num_joints().min(2) - 1);
        (0, neck)
    }
}

#[derive(Serialize, Deserialize)]
struct JointRecord {
    name: String,
    parent: Option<usize>,
    offset: [f64; 3],
    dof: Vec<Axis>,
    limits: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    format: String,
    joints: Vec<JointRecord>,
    region_map: Vec<Region>,
}

/// Reads the `format` field of a JSON document and checks it.
pub(crate) fn check_format(value: &serde_json::Value, expected: &'static str, what: &str) -> Result<()> {
    match value.get("format").and_then(|f| f.as_str()) {
        Some(f) if f == expected => Ok(()),
        Some(f) => Err(Error::UnsupportedVersion {
            found: f.to_string(),
            expected,
        }),
        None => Err(Error::invalid(format!("{what}: missing \"format\" field"))),
    }
}

pub(crate) fn parse_document(text: &str, expected: &'static str, what: &str) -> Result<serde_json::Value> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|source| Error::Parse {
        what: what.to_string(),
        source,
    })?;
    check_format(&value, expected, what)?;
    Ok(value)
}

impl SkeletonModel {
    pub fn to_json(&self) -> String {
        let file = SkeletonFile {
            format: SKELETON_FORMAT.to_string(),
            joints: self
                .joints
                .iter()
                .map(|j| JointRecord {
                    name: j.name.clone(),
                    parent: j.parent,
                    offset: [j.offset.x, j.offset.y, j.offset.z],
                    dof: j.dof.clone(),
                    limits: j.limits.clone(),
                })
                .collect(),
            region_map: self.regions.clone(),
        };
        serde_json::to_string_pretty(&file).expect("skeleton serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value = parse_document(text, SKELETON_FORMAT, "skeleton")?;
        let file: SkeletonFile = serde_json::from_value(value).map_err(|source| Error::Parse {
            what: "skeleton".into(),
            source,
        })?;
        let joints = file
            .joints
            .into_iter()
            .map(|r| Joint {
                name: r.name,
                parent: r.parent,
                offset: Vector3::from(r.offset),
                dof: r.dof,
                limits: r.limits,
            })
            .collect();
        SkeletonModel::new(joints, file.region_map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
