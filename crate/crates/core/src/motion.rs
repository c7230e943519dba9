//! Motion maps (per-frame concatenated joint quaternions with confidences)
//! and per-frame image observations.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{canonicalize, parse_document, QuatPose, SkeletalPose, SkeletonModel};

pub const MOTION_FORMAT: &str = "motion/1";
pub const OBSERVATIONS_FORMAT: &str = "observations/1";

/// `T x 4N` quaternions, `T x N` confidences and `T x 3` root translations,
/// all stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionMap {
    frames: usize,
    n_joints: usize,
    quats: Vec<f64>,
    conf: Vec<f64>,
    translations: Vec<f64>,
}

impl MotionMap {
    pub fn new(n_joints: usize, quats: Vec<f64>, conf: Vec<f64>, translations: Vec<f64>) -> Result<Self> {
        if n_joints == 0 {
            return Err(Error::invalid("motion map needs at least one joint"));
        }
        if quats.len() % (4 * n_joints) != 0 {
            return Err(Error::invalid(format!(
                "quaternion array of length {} is not a multiple of 4 x {n_joints}",
                quats.len()
            )));
        }
        let frames = quats.len() / (4 * n_joints);
        if frames < 2 {
            return Err(Error::invalid(format!("motion map needs at least 2 frames, got {frames}")));
        }
        if conf.len() != frames * n_joints {
            return Err(Error::invalid(format!(
                "confidence array has {} entries, expected {}",
                conf.len(),
                frames * n_joints
            )));
        }
        if translations.len() != frames * 3 {
            return Err(Error::invalid(format!(
                "translation array has {} entries, expected {}",
                translations.len(),
                frames * 3
            )));
        }
        if let Some(c) = conf.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Range(format!("confidence {c} outside [0, 1]")));
        }
        if !quats.iter().chain(&translations).all(|v| v.is_finite()) {
            return Err(Error::invalid("motion map contains non-finite values"));
        }
        Ok(MotionMap {
            frames,
            n_joints,
            quats,
            conf,
            translations,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn quats(&self) -> &[f64] {
        &self.quats
    }

    pub fn conf(&self) -> &[f64] {
        &self.conf
    }

    pub fn translations(&self) -> &[f64] {
        &self.translations
    }

    pub fn quat_row(&self, t: usize) -> &[f64] {
        let w = 4 * self.n_joints;
        &self.quats[t * w..(t + 1) * w]
    }

    pub fn conf_row(&self, t: usize) -> &[f64] {
        &self.conf[t * self.n_joints..(t + 1) * self.n_joints]
    }

    pub fn translation(&self, t: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.translations[3 * t..3 * t + 3])
    }

    /// Frame `t` as a quaternion pose with every 4-block normalized.
    ///
    /// A zero block becomes the identity rotation.
    pub fn quat_pose(&self, t: usize) -> QuatPose {
        QuatPose {
            quats: self.quat_row(t).chunks_exact(4).map(normalize_block).collect(),
        }
    }

    /// Same motion with the quaternion block replaced.
    pub fn with_quats(&self, quats: Vec<f64>) -> Result<Self> {
        MotionMap::new(self.n_joints, quats, self.conf.clone(), self.translations.clone())
    }

    pub fn with_translations(&self, translations: Vec<f64>) -> Result<Self> {
        MotionMap::new(self.n_joints, self.quats.clone(), self.conf.clone(), translations)
    }

    pub fn with_conf(&self, conf: Vec<f64>) -> Result<Self> {
        MotionMap::new(self.n_joints, self.quats.clone(), conf, self.translations.clone())
    }

    /// Frames `start..start + len` as a new motion map.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames {
            return Err(Error::invalid(format!(
                "window {start}..{} exceeds {} frames",
                start + len,
                self.frames
            )));
        }
        let w = 4 * self.n_joints;
        let n = self.n_joints;
        MotionMap::new(
            n,
            self.quats[start * w..(start + len) * w].to_vec(),
            self.conf[start * n..(start + len) * n].to_vec(),
            self.translations[start * 3..(start + len) * 3].to_vec(),
        )
    }

    /// Poses recovered through the quaternion-to-pose mapping.
    pub fn extract_poses(&self, skeleton: &SkeletonModel) -> Result<Vec<SkeletalPose>> {
        if skeleton.num_joints() != self.n_joints {
            return Err(Error::invalid(format!(
                "motion has {} joints, skeleton has {}",
                self.n_joints,
                skeleton.num_joints()
            )));
        }
        (0..self.frames)
            .map(|t| skeleton.quat_to_pose(&self.quat_pose(t), self.translation(t)))
            .collect()
    }
}

pub fn normalize_block(q: &[f64]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    } else {
        [1.0, 0.0, 0.0, 0.0]
    }
}

/// Packs poses and a `T x N` confidence map into a motion map.
pub fn build_motion_map(poses: &[SkeletalPose], skeleton: &SkeletonModel, conf: &[f64]) -> Result<MotionMap> {
    let n = skeleton.num_joints();
    if conf.len() != poses.len() * n {
        return Err(Error::invalid(format!(
            "{} poses need {} confidences, got {}",
            poses.len(),
            poses.len() * n,
            conf.len()
        )));
    }
    let mut quats = Vec::with_capacity(poses.len() * 4 * n);
    let mut translations = Vec::with_capacity(poses.len() * 3);
    for pose in poses {
        for q in skeleton.pose_to_quat(pose)?.quats {
            quats.extend_from_slice(&q);
        }
        translations.extend(pose.root_trans.iter());
    }
    MotionMap::new(n, quats, conf.to_vec(), translations)
}

/// Resamples `motion` at the (fractional) source times in `warp`.
///
/// Quaternions use normalized linear interpolation, translations and
/// confidences linear interpolation. Integer sample times copy rows exactly.
pub fn time_warp(motion: &MotionMap, warp: &[f64]) -> Result<MotionMap> {
    let last = (motion.frames - 1) as f64;
    if warp.len() < 2 {
        return Err(Error::invalid("time warp needs at least 2 samples"));
    }
    if warp.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("time warp must be strictly increasing"));
    }
    if !(warp[0] >= 0.0) || !(warp[warp.len() - 1] <= last) {
        return Err(Error::invalid(format!("time warp endpoints must lie in [0, {last}]")));
    }
    let n = motion.n_joints;
    let mut quats = Vec::with_capacity(warp.len() * 4 * n);
    let mut conf = Vec::with_capacity(warp.len() * n);
    let mut translations = Vec::with_capacity(warp.len() * 3);
    for &s in warp {
        let i = (s.floor() as usize).min(motion.frames - 1);
        let f = s - i as f64;
        if f == 0.0 || i + 1 >= motion.frames {
            quats.extend_from_slice(motion.quat_row(i));
            conf.extend_from_slice(motion.conf_row(i));
            translations.extend_from_slice(&motion.translations[3 * i..3 * i + 3]);
            continue;
        }
        let (qa, qb) = (motion.quat_row(i), motion.quat_row(i + 1));
        for (a, b) in qa.chunks_exact(4).zip(qb.chunks_exact(4)) {
            let sign = if a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            let mixed: Vec<f64> = a.iter().zip(b).map(|(x, y)| (1.0 - f) * x + f * sign * y).collect();
            quats.extend_from_slice(&canonicalize(normalize_block(&mixed)));
        }
        let (ca, cb) = (motion.conf_row(i), motion.conf_row(i + 1));
        conf.extend(ca.iter().zip(cb).map(|(x, y)| ((1.0 - f) * x + f * y).clamp(0.0, 1.0)));
        for k in 0..3 {
            translations.push((1.0 - f) * motion.translations[3 * i + k] + f * motion.translations[3 * (i + 1) + k]);
        }
    }
    MotionMap::new(n, quats, conf, translations)
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    format: String,
    #[serde(rename = "T")]
    frames: usize,
    n_joints: usize,
    quats: Vec<f64>,
    conf: Vec<f64>,
    translations: Vec<f64>,
}

impl MotionMap {
    pub fn to_json(&self) -> String {
        let file = MotionFile {
            format: MOTION_FORMAT.to_string(),
            frames: self.frames,
            n_joints: self.n_joints,
            quats: self.quats.clone(),
            conf: self.conf.clone(),
            translations: self.translations.clone(),
        };
        serde_json::to_string(&file).expect("motion serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value = parse_document(text, MOTION_FORMAT, "motion")?;
        let f: MotionFile = serde_json::from_value(value).map_err(|source| Error::Parse {
            what: "motion".into(),
            source,
        })?;
        let m = MotionMap::new(f.n_joints, f.quats, f.conf, f.translations)?;
        if m.frames != f.frames {
            return Err(Error::invalid(format!(
                "motion header declares T = {} but arrays hold {} frames",
                f.frames, m.frames
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { what, source } => Error::Parse {
                what: format!("{what} file {}", path.display()),
                source,
            },
            other => other,
        })
    }
}

/// 2D detections and silhouette samples for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameObservations {
    pub keypoints: Vec<Vector2<f64>>,
    pub conf: Vec<f64>,
    pub silhouette: Vec<Vector2<f64>>,
}

impl FrameObservations {
    pub fn validate(&self, n_joints: usize) -> Result<()> {
        if self.keypoints.len() != n_joints || self.conf.len() != n_joints {
            return Err(Error::invalid(format!(
                "observation has {} keypoints and {} confidences for {n_joints} joints",
                self.keypoints.len(),
                self.conf.len()
            )));
        }
        if let Some(c) = self.conf.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Range(format!("keypoint confidence {c} outside [0, 1]")));
        }
        if !self
            .keypoints
            .iter()
            .chain(&self.silhouette)
            .all(|p| p.x.is_finite() && p.y.is_finite())
        {
            return Err(Error::invalid("observation contains non-finite coordinates"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    keypoints: Vec<[f64; 2]>,
    conf: Vec<f64>,
    silhouette: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct ObservationsFile {
    format: String,
    n_joints: usize,
    frames: Vec<FrameRecord>,
}

pub fn observations_to_json(obs: &[FrameObservations], n_joints: usize) -> String {
    let pts = |v: &[Vector2<f64>]| v.iter().map(|p| [p.x, p.y]).collect();
    let file = ObservationsFile {
        format: OBSERVATIONS_FORMAT.to_string(),
        n_joints,
        frames: obs
            .iter()
            .map(|o| FrameRecord {
                keypoints: pts(&o.keypoints),
                conf: o.conf.clone(),
                silhouette: pts(&o.silhouette),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("observations serialize")
}

pub fn observations_from_json(text: &str) -> Result<Vec<FrameObservations>> {
    let value = parse_document(text, OBSERVATIONS_FORMAT, "observations")?;
    let f: ObservationsFile = serde_json::from_value(value).map_err(|source| Error::Parse {
        what: "observations".into(),
        source,
    })?;
    let pts = |v: Vec<[f64; 2]>| v.into_iter().map(|[x, y]| Vector2::new(x, y)).collect();
    f.frames
        .into_iter()
        .map(|r| {
            let o = FrameObservations {
                keypoints: pts(r.keypoints),
                conf: r.conf,
                silhouette: pts(r.silhouette),
            };
            o.validate(f.n_joints)?;
            Ok(o)
        })
        .collect()
}

pub fn save_observations(path: &Path, obs: &[FrameObservations], n_joints: usize) -> Result<()> {
    std::fs::write(path, observations_to_json(obs, n_joints)).map_err(|e| Error::io(path, e))
}

pub fn load_observations(path: &Path) -> Result<Vec<FrameObservations>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    observations_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_motion(frames: usize, n: usize, seed: u64) -> MotionMap {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let quats = (0..frames * n)
            .flat_map(|_| {
                let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                canonicalize(normalize_block(&q))
            })
            .collect();
        let conf = (0..frames * n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let tr = (0..frames * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        MotionMap::new(n, quats, conf, tr).unwrap()
    }

    #[test]
    fn identity_poses_give_identity_rows() {
        let sk = SkeletonModel::standard15();
        let poses = vec![SkeletalPose::identity(&sk); 4];
        let m = build_motion_map(&poses, &sk, &vec![1.0; 60]).unwrap();
        for t in 0..4 {
            for q in m.quat_row(t).chunks(4) {
                assert_eq!(q, &[1.0, 0.0, 0.0, 0.0]);
            }
            assert_eq!(m.translation(t), Vector3::zeros());
        }
    }

    #[test]
    fn confidence_out_of_range_is_rejected() {
        let sk = SkeletonModel::toy5();
        let poses = vec![SkeletalPose::identity(&sk); 2];
        let mut conf = vec![1.0; 10];
        conf[3] = 1.5;
        assert!(matches!(build_motion_map(&poses, &sk, &conf), Err(Error::Range(_))));
        assert!(build_motion_map(&poses, &sk, &conf[..9]).is_err());
    }

    #[test]
    fn single_frame_is_rejected() {
        assert!(MotionMap::new(1, vec![1.0, 0.0, 0.0, 0.0], vec![1.0], vec![0.0; 3]).is_err());
    }

    #[test]
    fn identity_warp_is_identity() {
        let m = random_motion(6, 3, 1);
        let w: Vec<f64> = (0..6).map(|t| t as f64).collect();
        assert_eq!(time_warp(&m, &w).unwrap(), m);
    }

    #[test]
    fn integer_samples_copy_rows() {
        let m = random_motion(8, 2, 2);
        let w = [1.0, 3.0, 4.0, 7.0];
        let out = time_warp(&m, &w).unwrap();
        for (k, &s) in w.iter().enumerate() {
            assert_eq!(out.quat_row(k), m.quat_row(s as usize));
            assert_eq!(out.conf_row(k), m.conf_row(s as usize));
            assert_eq!(out.translation(k), m.translation(s as usize));
        }
    }

    #[test]
    fn midpoint_is_normalized_average() {
        // Two nearby rotations so the sign alignment is not exercised.
        let a = [0.9, 0.1, 0.3, -0.2];
        let b = [0.8, 0.2, 0.35, -0.1];
        let na = normalize_block(&a);
        let nb = normalize_block(&b);
        let m = MotionMap::new(1, [na, nb].concat(), vec![0.2, 0.6], vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = time_warp(&m, &[0.0, 0.5]).unwrap();
        let avg: Vec<f64> = na.iter().zip(&nb).map(|(x, y)| 0.5 * (x + y)).collect();
        let norm = avg.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (k, v) in out.quat_row(1).iter().enumerate() {
            assert!((v - avg[k] / norm).abs() < 1e-9);
        }
        assert!((out.conf_row(1)[0] - 0.4).abs() < 1e-15);
        assert_eq!(out.translation(1), Vector3::new(0.5, 1.0, 1.5));
    }

    #[test]
    fn non_monotone_warp_is_rejected() {
        let m = random_motion(5, 1, 3);
        assert!(time_warp(&m, &[0.0, 2.0, 2.0, 3.0]).is_err());
        assert!(time_warp(&m, &[0.0, 3.0, 1.0]).is_err());
        assert!(time_warp(&m, &[0.0, 4.5]).is_err());
        assert!(time_warp(&m, &[-0.5, 2.0]).is_err());
    }

    #[test]
    fn motion_file_round_trip() {
        let m = random_motion(7, 4, 9);
        let back = MotionMap::from_json(&m.to_json()).unwrap();
        for (a, b) in back.quats().iter().zip(m.quats()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_motion_file_is_a_parse_error() {
        let text = random_motion(3, 2, 4).to_json();
        let cut = &text[..text.len() / 2];
        match MotionMap::from_json(cut) {
            Err(Error::Parse { source, .. }) => assert!(source.line() >= 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_motion_version_is_rejected() {
        let text = random_motion(3, 2, 5).to_json().replace("motion/1", "motion/2");
        assert!(matches!(MotionMap::from_json(&text), Err(Error::UnsupportedVersion { .. })));
    }

    #[test]
    fn header_frame_count_must_match() {
        let text = random_motion(3, 2, 6).to_json().replace("\"T\":3", "\"T\":4");
        assert!(MotionMap::from_json(&text).is_err());
    }

    #[test]
    fn observations_round_trip() {
        let obs = vec![FrameObservations {
            keypoints: vec![Vector2::new(1.5, 2.25), Vector2::new(-3.0, 4.0)],
            conf: vec![0.9, 0.1],
            silhouette: vec![Vector2::new(0.1, 0.2); 8],
        }];
        let back = observations_from_json(&observations_to_json(&obs, 2)).unwrap();
        assert_eq!(back, obs);
    }

    proptest! {
        #[test]
        fn build_then_extract_recovers_poses(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let sk = SkeletonModel::standard15();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let limits = sk.limits();
            let poses: Vec<SkeletalPose> = (0..3)
                .map(|_| SkeletalPose {
                    theta: limits.iter().map(|&[lo, hi]| lo + (hi - lo) * rng.random_range(0.02..0.98)).collect(),
                    root_rot: Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)),
                    root_trans: Vector3::new(rng.random_range(-2.0..2.0), 1.0, rng.random_range(-2.0..2.0)),
                })
                .collect();
            let m = build_motion_map(&poses, &sk, &vec![1.0; 45]).unwrap();
            let back = m.extract_poses(&sk).unwrap();
            for (p, q) in poses.iter().zip(&back) {
                for (a, b) in p.to_params().iter().zip(q.to_params()) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
