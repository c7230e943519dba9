//! A small seeded training set on the 5-joint rig.

use mocap_core::synth::synth_generate;
use mocap_core::{MotionMap, SceneConfig, SkeletonChoice, SkeletonModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::train::TrainingPair;

pub const TOY_SEQUENCES: usize = 8;
pub const TOY_FRAMES: usize = 32;

pub struct ToyData {
    pub skeleton: SkeletonModel,
    /// Degraded inputs paired with near-exact references.
    pub pairs: Vec<TrainingPair>,
    /// Time-warped re-performances of the same motions.
    pub unpaired: Vec<MotionMap>,
    pub ground_truth: Vec<MotionMap>,
}

/// Adds isotropic noise to every quaternion component; row confidences
/// scale the input noise, so unreliable joints are visibly worse.
fn perturb(rng: &mut impl Rng, m: &MotionMap, sigma: f64, conf: &[f64]) -> Result<MotionMap> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = m.n_joints();
    let quats = m
        .quats()
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let c = conf[i / 4 % n + i / (4 * n) * n];
            q + sigma * (1.5 - c) * unit.sample(rng)
        })
        .collect();
    Ok(m.with_quats(quats)?.with_conf(conf.to_vec())?)
}

/// `TOY_SEQUENCES` sequences of `TOY_FRAMES` frames. Inputs carry
/// confidence-dependent noise of about `input_noise` per quaternion
/// component; references carry a tenth of it.
pub fn toy_dataset(seed: u64, input_noise: f64) -> Result<ToyData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    let mut ground_truth = Vec::new();
    let mut skeleton = None;
    for i in 0..TOY_SEQUENCES {
        let scene = synth_generate(&SceneConfig {
            frames: TOY_FRAMES,
            skeleton: SkeletonChoice::Toy5,
            seed: seed.wrapping_add(i as u64),
            ..Default::default()
        })?;
        let gt = scene.gt_motion;
        let cells = gt.frames() * gt.n_joints();
        let conf: Vec<f64> = (0..cells).map(|_| rng.random_range(0.5..=1.0)).collect();
        let input = perturb(&mut rng, &gt, input_noise, &conf)?;
        let target = perturb(&mut rng, &gt, 0.1 * input_noise, &vec![1.0; cells])?.with_conf(gt.conf().to_vec())?;
        pairs.push(TrainingPair { input, target });
        unpaired.push(scene.marker_ref);
        ground_truth.push(gt);
        skeleton = Some(scene.skeleton);
    }
    Ok(ToyData {
        skeleton: skeleton.expect("at least one sequence"),
        pairs,
        unpaired,
        ground_truth,
    })
}
