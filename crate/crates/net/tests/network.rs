use mocap_core::{MotionMap, SkeletonModel};
use mocap_net::{
    checkpoint_from_json, checkpoint_to_json, discriminator_forward, generator_forward, load_checkpoint, loss_adv, loss_disc,
    loss_sv, save_checkpoint, Architecture, DiscriminatorParams, GeneratorParams, Mode, NetError, LAMBDA_QUAT,
};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch() -> Architecture {
    Architecture {
        global_width: 8,
        local_width: 4,
        gru_hidden: 8,
        decoder_widths: vec![8, 8],
        disc_hidden: 6,
        ..Architecture::for_skeleton(&SkeletonModel::toy5())
    }
}

fn random_motion(rng: &mut impl Rng, frames: usize, n: usize) -> MotionMap {
    let quats = (0..frames * 4 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let conf = (0..frames * n).map(|_| rng.random_range(0.0..=1.0)).collect();
    MotionMap::new(n, quats, conf, vec![0.0; frames * 3]).unwrap()
}

fn random_quats(rng: &mut impl Rng, frames: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((frames, 4 * n), || rng.random_range(-2.0..2.0))
}

#[test]
fn output_has_one_quaternion_per_joint_and_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gen = GeneratorParams::init(&small_arch(), &mut rng).unwrap();
    for frames in [7, 8, 20] {
        let m = random_motion(&mut rng, frames, 5);
        let q = generator_forward(&gen, &m, Mode::Eval).unwrap();
        assert_eq!(q.dim(), (frames, 20));
    }
}

#[test]
fn sequences_shorter_than_the_kernel_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gen = GeneratorParams::init(&small_arch(), &mut rng).unwrap();
    let m = random_motion(&mut rng, 6, 5);
    assert!(matches!(
        generator_forward(&gen, &m, Mode::Eval),
        Err(NetError::SequenceTooShort { frames: 6, kernel: 7 })
    ));
}

#[test]
fn joint_count_must_match_the_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gen = GeneratorParams::init(&small_arch(), &mut rng).unwrap();
    let m = random_motion(&mut rng, 10, 4);
    assert!(matches!(generator_forward(&gen, &m, Mode::Eval), Err(NetError::Shape(_))));
}

#[test]
fn zero_network_outputs_the_final_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let arch = small_arch();
    let mut gen = GeneratorParams::zeros(&arch).unwrap();
    let last = gen.decoder.last_mut().unwrap();
    last.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let bias = last.bias.clone();
    let m = random_motion(&mut rng, 9, 5);
    for mode in [Mode::Eval, Mode::Train { dropout_seed: 3 }] {
        let q = generator_forward(&gen, &m, mode).unwrap();
        for row in q.rows() {
            assert_eq!(row, bias);
        }
    }
}

#[test]
fn dropout_only_acts_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gen = GeneratorParams::init(&small_arch(), &mut rng).unwrap();
    let m = random_motion(&mut rng, 12, 5);
    let a = generator_forward(&gen, &m, Mode::Train { dropout_seed: 1 }).unwrap();
    let b = generator_forward(&gen, &m, Mode::Train { dropout_seed: 1 }).unwrap();
    let c = generator_forward(&gen, &m, Mode::Train { dropout_seed: 2 }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_discriminator_is_undecided() {
    let d = DiscriminatorParams::zeros(&small_arch()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    assert_eq!(discriminator_forward(&d, random_quats(&mut rng, 10, 5).view()).unwrap(), 0.5);
}

#[test]
fn discriminator_output_stays_strictly_inside_the_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = DiscriminatorParams::init(&small_arch(), &mut rng).unwrap();
    for _ in 0..100 {
        let frames = rng.random_range(1..30);
        let p = discriminator_forward(&d, random_quats(&mut rng, frames, 5).view()).unwrap();
        assert!(p > 0.0 && p < 1.0, "{p}");
    }
}

#[test]
fn discriminator_is_order_sensitive() {
    // first seed whose reversed sequence moves the score noticeably
    let found = (0..50u64).find_map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DiscriminatorParams::init(&small_arch(), &mut rng).unwrap();
        let q = random_quats(&mut rng, 8, 5);
        let mut rev = q.clone();
        rev.invert_axis(ndarray::Axis(0));
        let delta = discriminator_forward(&d, q.view()).unwrap() - discriminator_forward(&d, rev.view()).unwrap();
        (delta.abs() > 1e-6).then_some((seed, delta))
    });
    assert!(found.is_some(), "no seed separated a sequence from its reversal");
}

#[test]
fn empty_sequences_have_no_score() {
    let d = DiscriminatorParams::zeros(&small_arch()).unwrap();
    assert!(discriminator_forward(&d, Array2::<f64>::zeros((0, 20)).view()).is_err());
}

#[test]
fn matching_unit_quaternions_cost_nothing() {
    let q = array![[1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5], [0.0, 0.6, 0.8, 0.0, 0.0, 0.0, 0.0, 1.0]];
    assert_eq!(loss_sv(q.view(), q.view(), LAMBDA_QUAT).unwrap(), 0.0);
}

#[test]
fn a_doubled_quaternion_costs_lambda() {
    let q = array![[2.0, 0.0, 0.0, 0.0]];
    assert!((loss_sv(q.view(), q.view(), LAMBDA_QUAT).unwrap() - 1e-5).abs() < 1e-12);
}

#[test]
fn two_frame_loss_matches_scalar_arithmetic() {
    let pred = array![[1.0, 2.0, 0.0, 0.0], [0.0, 0.0, 3.0, 4.0]];
    let reference = array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    // squared differences: 4 in the first frame, 9 + 9 in the second;
    // norms are sqrt(5) and 5
    let fit = 4.0 + 9.0 + 9.0;
    let penalty = (5f64.sqrt() - 1.0).powi(2) + 16.0;
    let got = loss_sv(pred.view(), reference.view(), LAMBDA_QUAT).unwrap();
    assert!((got - (fit + 1e-5 * penalty)).abs() < 1e-12);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let a = Array2::<f64>::zeros((2, 8));
    let b = Array2::<f64>::zeros((3, 8));
    assert!(loss_sv(a.view(), b.view(), LAMBDA_QUAT).is_err());
    let c = Array2::<f64>::zeros((2, 6));
    assert!(loss_sv(c.view(), c.view(), LAMBDA_QUAT).is_err());
}

#[test]
fn adversarial_losses_match_the_examples() {
    assert_eq!(loss_disc(1.0, 0.0), 0.0);
    assert!((loss_disc(0.5, 0.5) - 0.5).abs() < 1e-12);
    assert!((loss_adv(0.3) - 0.49).abs() < 1e-12);
}

#[test]
fn adversarial_minima_sit_at_the_corners() {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &r in &grid {
        for &f in &grid {
            let l = loss_disc(r, f);
            if l < best.0 {
                best = (l, r, f);
            }
        }
    }
    assert_eq!((best.1, best.2), (1.0, 0.0));
    let adv = grid.iter().copied().min_by(|a, b| loss_adv(*a).total_cmp(&loss_adv(*b))).unwrap();
    assert_eq!(adv, 1.0);
}

#[test]
fn checkpoints_round_trip_through_a_file() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let arch = small_arch();
    let mut gen = GeneratorParams::init(&arch, &mut rng).unwrap();
    gen.norms[1].running_mean.fill(0.25);
    gen.norms[2].running_var.fill(3.5);
    let disc = DiscriminatorParams::init(&arch, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    save_checkpoint(&path, &gen, &disc).unwrap();
    let (g2, d2) = load_checkpoint(&path).unwrap();
    assert_eq!(g2, gen);
    assert_eq!(d2, disc);
    let m = random_motion(&mut rng, 10, 5);
    assert_eq!(generator_forward(&g2, &m, Mode::Eval).unwrap(), generator_forward(&gen, &m, Mode::Eval).unwrap());
}

#[test]
fn unknown_checkpoint_versions_are_rejected() {
    let arch = small_arch();
    let text = checkpoint_to_json(&GeneratorParams::zeros(&arch).unwrap(), &DiscriminatorParams::zeros(&arch).unwrap());
    let text = text.replace("hybridnet/1", "hybridnet/2");
    assert!(matches!(checkpoint_from_json(&text), Err(NetError::UnsupportedVersion { .. })));
}

#[test]
fn tensors_must_match_the_header() {
    let arch = small_arch();
    let text = checkpoint_to_json(&GeneratorParams::zeros(&arch).unwrap(), &DiscriminatorParams::zeros(&arch).unwrap());
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["architecture"]["gru_hidden"] = serde_json::json!(9);
    assert!(matches!(checkpoint_from_json(&doc.to_string()), Err(NetError::Shape(_))));

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["generator"][0]["data"].as_array_mut().unwrap().pop();
    assert!(matches!(checkpoint_from_json(&doc.to_string()), Err(NetError::Shape(_))));
}

#[test]
fn missing_checkpoint_names_its_path() {
    let err = load_checkpoint(std::path::Path::new("/nonexistent/net.json")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/net.json"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eval_generator_is_a_pure_function(seed in any::<u64>(), frames in 7usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = GeneratorParams::init(&small_arch(), &mut rng).unwrap();
        let m = random_motion(&mut rng, frames, 5);
        let a = generator_forward(&gen, &m, Mode::Eval).unwrap();
        let b = generator_forward(&gen.clone(), &m.clone(), Mode::Eval).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn discriminator_scores_are_probabilities(seed in any::<u64>(), frames in 1usize..20, scale in 0.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DiscriminatorParams::init(&small_arch(), &mut rng).unwrap();
        let q = random_quats(&mut rng, frames, 5) * scale;
        let p = discriminator_forward(&d, q.view()).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn losses_are_non_negative(r in 0.0f64..=1.0, f in 0.0f64..=1.0) {
        prop_assert!(loss_disc(r, f) >= 0.0);
        prop_assert!(loss_adv(f) >= 0.0);
        prop_assert!(loss_disc(r, f) >= loss_disc(1.0, 0.0));
    }

    #[test]
    fn sparse_view_loss_vanishes_only_at_unit_agreement(
        v in proptest::collection::vec(-2.0f64..2.0, 8),
    ) {
        let pred = Array2::from_shape_vec((2, 4), v).unwrap();
        let l = loss_sv(pred.view(), pred.view(), LAMBDA_QUAT).unwrap();
        prop_assert!(l >= 0.0);
        let other = pred.mapv(|x| x + 0.1);
        prop_assert!(loss_sv(pred.view(), other.view(), LAMBDA_QUAT).unwrap() > l);
    }
}
