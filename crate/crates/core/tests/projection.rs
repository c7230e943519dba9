use mocap_core::camera::{silhouette_points, project_capsules, Camera, CapsuleBody};
use mocap_core::skeleton::SkeletonModel;
use mocap_core::synth::random_pose;
use nalgebra::{Matrix3x4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
    let eye = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(0.5..3.0), rng.random_range(3.0..6.0));
    let f = rng.random_range(300.0..1500.0);
    Camera::look_at(eye, Vector3::new(0.0, 1.0, 0.0), Vector3::y(), f, 320.0, 240.0).unwrap()
}

#[test]
fn projection_matches_projection_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let cam = random_camera(&mut rng);
        let k = nalgebra::Matrix3::new(cam.fx, 0.0, cam.cx, 0.0, cam.fy, cam.cy, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.rotation);
        rt.set_column(3, &cam.translation);
        let p_mat = k * rt;
        let x = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0));
        let h = p_mat * Vector4::new(x.x, x.y, x.z, 1.0);
        let expect = nalgebra::Vector2::new(h.x / h.z, h.y / h.z);
        let got = cam.project(&x).unwrap();
        assert!((got - expect).abs().max() <= 1e-9, "{got} vs {expect}");
    }
}

#[test]
fn projection_is_constant_along_rays() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let cam = random_camera(&mut rng);
        let pc = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..5.0));
        let base = cam.project_camera_space(&pc).unwrap();
        for lambda in [0.1, 0.5, 2.0, 17.0] {
            let scaled = cam.project_camera_space(&(pc * lambda)).unwrap();
            assert!((scaled - base).abs().max() <= 1e-9);
        }
    }
}

#[test]
fn silhouette_points_never_fall_inside_a_capsule() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sk = SkeletonModel::standard15();
    let body = CapsuleBody::from_bone_lengths(&sk);
    for _ in 0..30 {
        let mut pose = random_pose(&mut rng, &sk);
        pose.root_trans = Vector3::new(rng.random_range(-0.5..0.5), 0.9, rng.random_range(-0.5..0.5));
        let cam = random_camera(&mut rng);
        let n = rng.random_range(8..80);
        let pts = silhouette_points(&cam, &sk, &pose, &body, n).unwrap();
        assert_eq!(pts.len(), n);
        let stadiums = project_capsules(&cam, &sk, &sk.forward_kinematics(&pose).unwrap(), &body);
        for p in &pts {
            for st in &stadiums {
                assert!(st.distance_to_segment(p) >= st.radius - 1e-6);
            }
        }
    }
}
