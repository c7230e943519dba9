//! Global-frame joint position errors. Skeleton units are metres; every
//! error reported here is in millimetres.

use mocap_core::{MotionMap, SkeletonModel};

use crate::error::{CliError, Result};

type Positions = Vec<Vec<[f64; 3]>>;

fn positions(motion: &MotionMap, skeleton: &SkeletonModel) -> Result<Positions> {
    let mut out = Vec::with_capacity(motion.frames());
    for pose in motion.extract_poses(skeleton)? {
        out.push(skeleton.forward_kinematics(&pose)?.iter().map(|p| [p.x, p.y, p.z]).collect());
    }
    Ok(out)
}

fn check(pred: &MotionMap, gt: &MotionMap) -> Result<()> {
    if pred.frames() != gt.frames() || pred.n_joints() != gt.n_joints() {
        return Err(CliError::Config(format!(
            "cannot compare {}x{} motion against {}x{} ground truth",
            pred.frames(),
            pred.n_joints(),
            gt.frames(),
            gt.n_joints()
        )));
    }
    Ok(())
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean joint error of every frame, mm.
pub fn per_frame_mpjpe(pred: &MotionMap, gt: &MotionMap, skeleton: &SkeletonModel) -> Result<Vec<f64>> {
    check(pred, gt)?;
    let (p, g) = (positions(pred, skeleton)?, positions(gt, skeleton)?);
    Ok(p.iter()
        .zip(&g)
        .map(|(pf, gf)| 1000.0 * pf.iter().zip(gf).map(|(a, b)| dist(a, b)).sum::<f64>() / pf.len() as f64)
        .collect())
}

pub fn mpjpe(pred: &MotionMap, gt: &MotionMap, skeleton: &SkeletonModel) -> Result<f64> {
    let frames = per_frame_mpjpe(pred, gt, skeleton)?;
    Ok(frames.iter().sum::<f64>() / frames.len().max(1) as f64)
}

/// Percentage of joint-frames closer than `alpha` times that frame's
/// ground-truth torso length.
pub fn pck(pred: &MotionMap, gt: &MotionMap, skeleton: &SkeletonModel, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(CliError::Config(format!("pck threshold factor must be positive, got {alpha}")));
    }
    check(pred, gt)?;
    let (p, g) = (positions(pred, skeleton)?, positions(gt, skeleton)?);
    let (a, b) = skeleton.torso_pair();
    let (mut hit, mut total) = (0usize, 0usize);
    for (pf, gf) in p.iter().zip(&g) {
        let limit = alpha * dist(&gf[a], &gf[b]);
        hit += pf.iter().zip(gf).filter(|(x, y)| dist(x, y) < limit).count();
        total += pf.len();
    }
    Ok(100.0 * hit as f64 / total.max(1) as f64)
}
