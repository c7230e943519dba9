use mocap_cli::{mpjpe, pck, per_frame_mpjpe};
use mocap_core::motion::build_motion_map;
use mocap_core::synth::random_pose;
use mocap_core::{MotionMap, SkeletalPose, SkeletonModel};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_motion(rng: &mut ChaCha8Rng, skeleton: &SkeletonModel, frames: usize) -> (MotionMap, Vec<SkeletalPose>) {
    let poses: Vec<SkeletalPose> = (0..frames).map(|_| random_pose(rng, skeleton)).collect();
    let conf = vec![1.0; frames * skeleton.num_joints()];
    (build_motion_map(&poses, skeleton, &conf).unwrap(), poses)
}

fn shifted(m: &MotionMap, by: impl Fn(usize) -> Vector3<f64>) -> MotionMap {
    let mut trans = m.translations().to_vec();
    for t in 0..m.frames() {
        let d = by(t);
        for k in 0..3 {
            trans[3 * t + k] += d[k];
        }
    }
    m.with_translations(trans).unwrap()
}

#[test]
fn identical_motion_has_no_error() {
    let sk = SkeletonModel::standard15();
    let (m, _) = random_motion(&mut ChaCha8Rng::seed_from_u64(1), &sk, 6);
    assert_eq!(mpjpe(&m, &m, &sk).unwrap(), 0.0);
    assert_eq!(pck(&m, &m, &sk, 0.5).unwrap(), 100.0);
}

#[test]
fn a_rigid_root_shift_is_the_error() {
    let sk = SkeletonModel::standard15();
    let (gt, _) = random_motion(&mut ChaCha8Rng::seed_from_u64(2), &sk, 8);
    let pred = shifted(&gt, |_| Vector3::new(0.006, 0.0, -0.008));
    assert!((mpjpe(&pred, &gt, &sk).unwrap() - 10.0).abs() < 1e-9);
}

#[test]
fn error_matches_a_direct_double_loop() {
    let sk = SkeletonModel::standard15();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (gt, gp) = random_motion(&mut rng, &sk, 5);
    let (pred, pp) = random_motion(&mut rng, &sk, 5);
    let mut sum = 0.0;
    let mut count = 0;
    for (a, b) in pp.iter().zip(&gp) {
        let (pa, pb) = (sk.forward_kinematics(a).unwrap(), sk.forward_kinematics(b).unwrap());
        for j in 0..sk.num_joints() {
            let d = pa[j] - pb[j];
            sum += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
            count += 1;
        }
    }
    let oracle = 1000.0 * sum / count as f64;
    assert!((mpjpe(&pred, &gt, &sk).unwrap() - oracle).abs() < 1e-9);
    assert_eq!(per_frame_mpjpe(&pred, &gt, &sk).unwrap().len(), 5);
}

#[test]
fn displacing_every_joint_by_two_torsos_misses_everything() {
    let sk = SkeletonModel::standard15();
    let (gt, gp) = random_motion(&mut ChaCha8Rng::seed_from_u64(4), &sk, 6);
    let (a, b) = sk.torso_pair();
    let pred = shifted(&gt, |t| {
        let p = sk.forward_kinematics(&gp[t]).unwrap();
        Vector3::new(2.0 * (p[a] - p[b]).norm(), 0.0, 0.0)
    });
    assert_eq!(pck(&pred, &gt, &sk, 0.5).unwrap(), 0.0);
}

#[test]
fn pck_matches_a_counting_oracle() {
    let sk = SkeletonModel::standard15();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (gt, gp) = random_motion(&mut rng, &sk, 10);
    // every frame gets a root shift somewhere around the threshold and some
    // frames a different pose as well
    let mut poses = gp.clone();
    for p in poses.iter_mut() {
        p.root_trans += Vector3::new(rng.random_range(0.0..0.4), 0.0, 0.0);
        if rng.random_bool(0.3) {
            p.theta = random_pose(&mut rng, &sk).theta;
        }
    }
    let pred = build_motion_map(&poses, &sk, gt.conf()).unwrap();
    let (a, b) = sk.torso_pair();
    for alpha in [0.3, 0.5] {
        let mut hits = 0;
        for (p, g) in poses.iter().zip(&gp) {
            let (pp, pg) = (sk.forward_kinematics(p).unwrap(), sk.forward_kinematics(g).unwrap());
            let limit = alpha * (pg[a] - pg[b]).norm();
            hits += (0..sk.num_joints()).filter(|&j| (pp[j] - pg[j]).norm() < limit).count();
        }
        let oracle = 100.0 * hits as f64 / (10 * sk.num_joints()) as f64;
        let got = pck(&pred, &gt, &sk, alpha).unwrap();
        assert!((got - oracle).abs() < 1e-9, "alpha {alpha}: {got} vs {oracle}");
        assert!(got > 0.0 && got < 100.0);
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let sk = SkeletonModel::standard15();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (a, _) = random_motion(&mut rng, &sk, 4);
    let (b, _) = random_motion(&mut rng, &sk, 5);
    assert!(mpjpe(&a, &b, &sk).is_err());
    assert!(pck(&a, &b, &sk, 0.5).is_err());
    assert!(pck(&a, &a, &sk, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_stay_in_range(seed in any::<u64>(), alpha in 0.05f64..2.0) {
        let sk = SkeletonModel::toy5();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, _) = random_motion(&mut rng, &sk, 3);
        let (b, _) = random_motion(&mut rng, &sk, 3);
        let e = mpjpe(&a, &b, &sk).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!((e - mpjpe(&b, &a, &sk).unwrap()).abs() < 1e-9);
        let p = pck(&a, &b, &sk, alpha).unwrap();
        prop_assert!((0.0..=100.0).contains(&p));
        prop_assert!(pck(&a, &b, &sk, 2.0 * alpha).unwrap() >= p);
    }
}
