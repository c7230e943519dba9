//! Pinhole camera and the capsule-body silhouette proxy.

use std::path::Path;

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{parse_document, SkeletalPose, SkeletonModel};

pub const CAMERA_FORMAT: &str = "camera/1";

/// Minimum camera-space depth for a point to be projectable.
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole camera with world-to-camera extrinsics `x_cam = R * x + t`.
///
/// Camera axes follow the image convention: +X right, +Y down, +Z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(cx.is_finite() && cy.is_finite() && translation.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("camera has non-finite principal point or translation"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-9) || !((rotation.determinant() - 1.0).abs() <= 1e-9) {
            return Err(Error::invalid("camera rotation is not a proper rotation matrix"));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly world-up.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, focal: f64, cx: f64, cy: f64) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::invalid("look_at: up is parallel to the viewing direction"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        // Re-orthonormalize away rounding so the constructor's check is exact enough.
        let rotation = nalgebra::Rotation3::from_matrix(&rotation).into_inner();
        let translation = -(rotation * eye);
        Camera::new(focal, focal, cx, cy, rotation, translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects a camera-space point.
    pub fn project_camera_space(&self, pc: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(pc.z > MIN_DEPTH) {
            return Err(Error::BehindCamera { z: pc.z });
        }
        Ok(Vector2::new(self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy))
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_camera_space(&self.to_camera(p))
    }

    /// Projection and its derivative w.r.t. the world point.
    pub fn project_with_jacobian(&self, p: &Vector3<f64>) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
        let pc = self.to_camera(p);
        let uv = self.project_camera_space(&pc)?;
        let iz = 1.0 / pc.z;
        let d = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * pc.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * pc.y * iz * iz,
        );
        Ok((uv, d * self.rotation))
    }
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    format: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major.
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Camera {
    pub fn to_json(&self) -> String {
        let r = &self.rotation;
        let file = CameraFile {
            format: CAMERA_FORMAT.to_string(),
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        };
        serde_json::to_string_pretty(&file).expect("camera serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value = parse_document(text, CAMERA_FORMAT, "camera")?;
        let f: CameraFile = serde_json::from_value(value).map_err(|source| Error::Parse {
            what: "camera".into(),
            source,
        })?;
        Camera::new(
            f.fx,
            f.fy,
            f.cx,
            f.cy,
            Matrix3::from_row_slice(&f.rotation),
            Vector3::from(f.translation),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// One capsule per kinematic edge, in [`SkeletonModel::edges`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleBody {
    pub radii: Vec<f64>,
}

impl CapsuleBody {
    pub fn new(skeleton: &SkeletonModel, radii: Vec<f64>) -> Result<Self> {
        let n = skeleton.edges().len();
        if radii.len() != n {
            return Err(Error::invalid(format!("{} capsule radii for {n} bones", radii.len())));
        }
        if !radii.iter().all(|r| *r > 0.0 && r.is_finite()) {
            return Err(Error::invalid("capsule radii must be positive"));
        }
        Ok(CapsuleBody { radii })
    }

    pub fn uniform(skeleton: &SkeletonModel, radius: f64) -> Result<Self> {
        Self::new(skeleton, vec![radius; skeleton.edges().len()])
    }

    /// Radii proportional to bone length, bounded to a plausible limb range.
    pub fn from_bone_lengths(skeleton: &SkeletonModel) -> Self {
        let radii = skeleton
            .edges()
            .iter()
            .map(|&(_, c)| (0.2 * skeleton.joints()[c].offset.norm()).clamp(0.03, 0.1))
            .collect();
        CapsuleBody { radii }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CapsuleBody {
            radii: self.radii.iter().map(|r| r * factor).collect(),
        }
    }
}

/// A projected capsule: the set of points within `radius` of segment `a`-`b`.
#[derive(Clone, Copy, Debug)]
pub struct Stadium {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub radius: f64,
}

impl Stadium {
    pub fn distance_to_segment(&self, p: &Vector2<f64>) -> f64 {
        point_segment_distance(p, &self.a, &self.b)
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.b - self.a).norm() + 2.0 * std::f64::consts::PI * self.radius
    }

    /// Point at arc length `s` along the outline, starting on the left side at `a`.
    pub fn outline_point(&self, s: f64) -> Vector2<f64> {
        let seg = self.b - self.a;
        let len = seg.norm();
        let dir = if len > 1e-12 { seg / len } else { Vector2::x() };
        let normal = Vector2::new(-dir.y, dir.x);
        let r = self.radius;
        let arc = std::f64::consts::PI * r;
        let s = s.rem_euclid(self.perimeter());
        let base = normal.y.atan2(normal.x);
        if s < len {
            self.a + normal * r + dir * s
        } else if s < len + arc {
            // Half turn around b, from +normal through +dir to -normal.
            let phi = base - (s - len) / r;
            self.b + Vector2::new(phi.cos(), phi.sin()) * r
        } else if s < 2.0 * len + arc {
            self.b - normal * r - dir * (s - len - arc)
        } else {
            let phi = base + std::f64::consts::PI - (s - 2.0 * len - arc) / r;
            self.a + Vector2::new(phi.cos(), phi.sin()) * r
        }
    }
}

pub fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let t = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Projection of the capsule around segment `a`-`b` (world points), or
/// `None` when either end is behind the camera.
pub fn project_capsule(camera: &Camera, a: &Vector3<f64>, b: &Vector3<f64>, radius: f64) -> Option<Stadium> {
    let pa = camera.to_camera(a);
    let pb = camera.to_camera(b);
    let ia = camera.project_camera_space(&pa).ok()?;
    let ib = camera.project_camera_space(&pb).ok()?;
    let z = 0.5 * (pa.z + pb.z);
    Some(Stadium {
        a: ia,
        b: ib,
        radius: radius * camera.fx / z,
    })
}

fn indexed_capsules(
    camera: &Camera,
    skeleton: &SkeletonModel,
    positions: &[Vector3<f64>],
    body: &CapsuleBody,
) -> (Vec<usize>, Vec<Stadium>) {
    skeleton
        .edges()
        .iter()
        .zip(&body.radii)
        .enumerate()
        .filter_map(|(e, (&(p, c), &radius))| Some((e, project_capsule(camera, &positions[p], &positions[c], radius)?)))
        .unzip()
}

/// Projected capsules for bones with both endpoints in front of the camera.
pub fn project_capsules(
    camera: &Camera,
    skeleton: &SkeletonModel,
    positions: &[Vector3<f64>],
    body: &CapsuleBody,
) -> Vec<Stadium> {
    indexed_capsules(camera, skeleton, positions, body).1
}

/// A point of a union outline, with the shape it lies on and its arc
/// position as a fraction of that shape's perimeter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlineSample {
    pub point: Vector2<f64>,
    pub shape: usize,
    pub fraction: f64,
}

/// Samples exactly `n` points on the outline of a union of stadiums.
pub fn union_outline(stadiums: &[Stadium], n: usize) -> Result<Vec<Vector2<f64>>> {
    Ok(union_outline_samples(stadiums, n)?.into_iter().map(|s| s.point).collect())
}

pub fn union_outline_samples(stadiums: &[Stadium], n: usize) -> Result<Vec<OutlineSample>> {
    if stadiums.is_empty() {
        return Err(Error::EmptySilhouette);
    }
    let mut per_shape = (4 * n).max(64);
    loop {
        let mut kept = Vec::new();
        for (k, st) in stadiums.iter().enumerate() {
            let step = st.perimeter() / per_shape as f64;
            for i in 0..per_shape {
                let p = st.outline_point((i as f64 + 0.5) * step);
                let covered = stadiums
                    .iter()
                    .enumerate()
                    .any(|(m, other)| m != k && other.distance_to_segment(&p) < other.radius - 1e-9);
                if !covered {
                    kept.push(OutlineSample {
                        point: p,
                        shape: k,
                        fraction: (i as f64 + 0.5) / per_shape as f64,
                    });
                }
            }
        }
        if kept.len() >= n || per_shape >= 1 << 14 {
            if kept.is_empty() {
                return Err(Error::EmptySilhouette);
            }
            let len = kept.len();
            return Ok((0..n).map(|k| kept[(k * len / n) % len]).collect());
        }
        per_shape *= 2;
    }
}

/// `n` points on the projected outline of the capsule body in `pose`.
pub fn silhouette_points(
    camera: &Camera,
    skeleton: &SkeletonModel,
    pose: &SkeletalPose,
    body: &CapsuleBody,
    n: usize,
) -> Result<Vec<Vector2<f64>>> {
    Ok(silhouette_samples(camera, skeleton, pose, body, n)?.into_iter().map(|s| s.point).collect())
}

/// Like [`silhouette_points`], but each sample's `shape` is the index of
/// its bone in [`SkeletonModel::edges`].
pub fn silhouette_samples(
    camera: &Camera,
    skeleton: &SkeletonModel,
    pose: &SkeletalPose,
    body: &CapsuleBody,
    n: usize,
) -> Result<Vec<OutlineSample>> {
    if n < 8 {
        return Err(Error::invalid(format!("silhouette needs at least 8 points, asked for {n}")));
    }
    if body.radii.len() != skeleton.edges().len() {
        return Err(Error::invalid("capsule body does not match skeleton"));
    }
    let positions = skeleton.forward_kinematics(pose)?;
    let (edges, stadiums) = indexed_capsules(camera, skeleton, &positions, body);
    let mut samples = union_outline_samples(&stadiums, n)?;
    for s in &mut samples {
        s.shape = edges[s.shape];
    }
    Ok(samples)
}
