//! Least-squares form of the sequence energies.
//!
//! Parameters are stored frame-major. With [`FreeParams::All`] every frame
//! holds `[u, root_rot, root_trans]` where the joint angles are recovered as
//! `theta = lo + (hi - lo) * sigmoid(u)`; with [`FreeParams::TranslationOnly`]
//! a frame holds its root translation and the rest comes from the base poses.

use mocap_core::camera::{project_capsule, OutlineSample};
use mocap_core::{Camera, CapsuleBody, Error as CoreError, FrameObservations, SkeletalPose, SkeletonModel};
use nalgebra::{Matrix2x3, Vector2, Vector3};

use crate::energy::{confident, model_outline, nearest, param_weights, unprojectable, MIN_SILHOUETTE_POINTS};
use crate::error::{RefineError, Result};
use crate::lm::{Jacobian, LeastSquaresProblem, SparseJacobian};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeParams {
    All,
    TranslationOnly,
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Bounded angle and its derivative with respect to `u`.
fn bounded(u: f64, [lo, hi]: [f64; 2]) -> (f64, f64) {
    let s = sigmoid(u);
    let span = hi - lo;
    // keep saturated values off the limits themselves
    let margin = span * 1e-12;
    let theta = (lo + span * s).clamp(lo + margin, hi - margin);
    (theta, span * s * (1.0 - s))
}

fn unbounded(theta: f64, [lo, hi]: [f64; 2]) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let p = ((theta - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Copy)]
pub struct ViewTerm<'a> {
    pub camera: &'a Camera,
    pub obs: &'a [FrameObservations],
}

struct Anchor {
    targets: Vec<SkeletalPose>,
    /// Square roots of the per-parameter weights; translation is left out
    /// when there are only `D + 3` of them.
    sqrt_w: Vec<f64>,
}

struct Reprojection<'a> {
    views: Vec<ViewTerm<'a>>,
    /// Confident joints per view and frame.
    sets: Vec<Vec<Vec<usize>>>,
    lambda: f64,
}

struct Silhouette<'a> {
    camera: &'a Camera,
    obs: &'a [FrameObservations],
    body: &'a CapsuleBody,
    lambda: f64,
}

pub struct SequenceProblem<'a> {
    skeleton: &'a SkeletonModel,
    free: FreeParams,
    base: Vec<SkeletalPose>,
    limits: Vec<[f64; 2]>,
    anchor: Option<Anchor>,
    reprojection: Option<Reprojection<'a>>,
    lambda_t: f64,
    silhouette: Option<Silhouette<'a>>,
}

impl<'a> SequenceProblem<'a> {
    /// `base` supplies the fixed parts of each frame and the frame count.
    pub fn new(skeleton: &'a SkeletonModel, free: FreeParams, base: Vec<SkeletalPose>) -> Result<Self> {
        if base.is_empty() {
            return Err(RefineError::InvalidInput("empty pose sequence".into()));
        }
        for p in &base {
            if p.theta.len() != skeleton.total_dof() || !p.is_finite() {
                return Err(RefineError::InvalidInput("base pose does not fit the skeleton".into()));
            }
        }
        Ok(SequenceProblem {
            skeleton,
            free,
            base,
            limits: skeleton.limits(),
            anchor: None,
            reprojection: None,
            lambda_t: 0.0,
            silhouette: None,
        })
    }

    pub fn frames(&self) -> usize {
        self.base.len()
    }

    fn check_frames(&self, n: usize, what: &str) -> Result<()> {
        if n != self.frames() {
            return Err(RefineError::InvalidInput(format!(
                "{what} has {n} frames, sequence has {}",
                self.frames()
            )));
        }
        Ok(())
    }

    /// Pulls angles and root rotation towards `targets`.
    pub fn with_anchor(mut self, targets: Vec<SkeletalPose>, joint_weights: Option<&[f64]>) -> Result<Self> {
        self.check_frames(targets.len(), "anchor")?;
        let mut w = param_weights(self.skeleton, joint_weights);
        w.truncate(self.skeleton.total_dof() + 3);
        self.anchor = Some(Anchor {
            targets,
            sqrt_w: w.iter().map(|v| v.sqrt()).collect(),
        });
        Ok(self)
    }

    /// Pulls every pose parameter, translation included, towards `targets`.
    pub fn with_prior(mut self, targets: Vec<SkeletalPose>, lambda: f64) -> Result<Self> {
        self.check_frames(targets.len(), "prior")?;
        self.anchor = Some(Anchor {
            targets,
            sqrt_w: vec![lambda.sqrt(); self.skeleton.num_pose_params()],
        });
        Ok(self)
    }

    /// Confidence-gated reprojection, averaged over views.
    pub fn with_views(mut self, views: Vec<ViewTerm<'a>>, lambda: f64, threshold: f64) -> Result<Self> {
        if views.is_empty() {
            return Err(RefineError::InvalidInput("no views".into()));
        }
        let mut sets = Vec::with_capacity(views.len());
        for v in &views {
            self.check_frames(v.obs.len(), "observations")?;
            for o in v.obs {
                o.validate(self.skeleton.num_joints())?;
            }
            sets.push(v.obs.iter().map(|o| confident(o, threshold)).collect());
        }
        self.reprojection = Some(Reprojection { views, sets, lambda });
        Ok(self)
    }

    /// Drops every keypoint whose joint is not in `keep` from the
    /// reprojection term.
    pub fn restrict_joints(mut self, keep: &[bool]) -> Self {
        if let Some(rp) = &mut self.reprojection {
            for view in &mut rp.sets {
                for set in view.iter_mut() {
                    set.retain(|&i| keep[i]);
                }
            }
        }
        self
    }

    pub fn with_temporal(mut self, lambda: f64) -> Self {
        self.lambda_t = lambda;
        self
    }

    pub fn with_silhouette(
        mut self,
        camera: &'a Camera,
        obs: &'a [FrameObservations],
        body: &'a CapsuleBody,
        lambda: f64,
    ) -> Result<Self> {
        self.check_frames(obs.len(), "silhouettes")?;
        if body.radii.len() != self.skeleton.edges().len() {
            return Err(RefineError::InvalidInput("capsule body does not match skeleton".into()));
        }
        if lambda > 0.0 {
            self.silhouette = Some(Silhouette {
                camera,
                obs,
                body,
                lambda,
            });
        }
        Ok(self)
    }

    pub fn params_per_frame(&self) -> usize {
        match self.free {
            FreeParams::All => self.skeleton.num_pose_params(),
            FreeParams::TranslationOnly => 3,
        }
    }

    pub fn encode(&self, poses: &[SkeletalPose]) -> Result<Vec<f64>> {
        self.check_frames(poses.len(), "initial poses")?;
        let mut x = Vec::with_capacity(self.frames() * self.params_per_frame());
        for p in poses {
            if self.free == FreeParams::All {
                x.extend(p.theta.iter().zip(&self.limits).map(|(&t, &l)| unbounded(t, l)));
                x.extend(p.root_rot.iter());
            }
            x.extend(p.root_trans.iter());
        }
        Ok(x)
    }

    /// Pose of frame `t` from its own parameter block, with `dtheta/du`.
    fn frame_pose(&self, t: usize, local: &[f64]) -> (SkeletalPose, Vec<f64>) {
        match self.free {
            FreeParams::All => {
                let d = self.skeleton.total_dof();
                let (theta, dtheta): (Vec<f64>, Vec<f64>) =
                    local[..d].iter().zip(&self.limits).map(|(&u, &l)| bounded(u, l)).unzip();
                let pose = SkeletalPose {
                    theta,
                    root_rot: Vector3::new(local[d], local[d + 1], local[d + 2]),
                    root_trans: Vector3::new(local[d + 3], local[d + 4], local[d + 5]),
                };
                (pose, dtheta)
            }
            FreeParams::TranslationOnly => {
                let pose = SkeletalPose {
                    root_trans: Vector3::new(local[0], local[1], local[2]),
                    ..self.base[t].clone()
                };
                (pose, Vec::new())
            }
        }
    }

    pub fn decode(&self, x: &[f64]) -> Vec<SkeletalPose> {
        let p = self.params_per_frame();
        (0..self.frames()).map(|t| self.frame_pose(t, &x[t * p..(t + 1) * p]).0).collect()
    }

    /// Sparse row over frame `t`'s columns from a derivative with respect to
    /// the full pose parameters.
    fn to_local(&self, t: usize, full: &[f64], dtheta: &[f64], sign: f64, row: &mut Vec<(usize, f64)>) {
        let p = self.params_per_frame();
        let col0 = t * p;
        let d = self.skeleton.total_dof();
        match self.free {
            FreeParams::All => {
                for (k, &v) in full.iter().enumerate() {
                    let v = if k < d { v * dtheta[k] } else { v };
                    if v != 0.0 {
                        row.push((col0 + k, sign * v));
                    }
                }
            }
            FreeParams::TranslationOnly => {
                for k in 0..3 {
                    let v = full[d + 3 + k];
                    if v != 0.0 {
                        row.push((col0 + k, sign * v));
                    }
                }
            }
        }
    }

    fn silhouette_scale(&self, s: &Silhouette<'_>, n: usize) -> f64 {
        (s.lambda / (self.frames() as f64 * 2.0 * n as f64)).sqrt()
    }

    /// Chamfer offsets of one frame, both directions.
    fn silhouette_residuals(&self, s: &Silhouette<'_>, t: usize, pose: &SkeletalPose, out: &mut Vec<f64>) -> Result<()> {
        let observed = &s.obs[t].silhouette;
        let n = observed.len();
        if n < MIN_SILHOUETTE_POINTS {
            return Ok(());
        }
        let k = self.silhouette_scale(s, n);
        match model_outline(s.camera, self.skeleton, pose, s.body, n)? {
            Some(samples) => {
                let model: Vec<Vector2<f64>> = samples.iter().map(|m| m.point).collect();
                let mut push = |d: Vector2<f64>| out.extend([k * d.x, k * d.y]);
                for o in observed {
                    push(o - model[nearest(o, &model)]);
                }
                for m in &model {
                    push(m - observed[nearest(m, observed)]);
                }
            }
            None => {
                let d = unprojectable(s.camera);
                for _ in 0..2 * n {
                    out.extend([k * d.x, k * d.y]);
                }
            }
        }
        Ok(())
    }

    fn frame_terms(&self, t: usize, pose: &SkeletalPose, out: &mut Vec<f64>) -> Result<()> {
        if let Some(a) = &self.anchor {
            let target = a.targets[t].to_params();
            for ((w, s), m) in a.sqrt_w.iter().zip(pose.to_params()).zip(target) {
                out.push(w * (s - m));
            }
        }
        if let Some(rp) = &self.reprojection {
            let positions = self.skeleton.forward_kinematics(pose)?;
            for (v, view) in rp.views.iter().enumerate() {
                let set = &rp.sets[v][t];
                if set.is_empty() {
                    continue;
                }
                let k = (rp.lambda / (rp.views.len() * self.frames() * set.len()) as f64).sqrt();
                for &i in set {
                    let d = match view.camera.project(&positions[i]) {
                        Ok(uv) => uv - view.obs[t].keypoints[i],
                        Err(CoreError::BehindCamera { .. }) => unprojectable(view.camera),
                        Err(e) => return Err(e.into()),
                    };
                    out.extend([k * d.x, k * d.y]);
                }
            }
        }
        if let Some(s) = &self.silhouette {
            self.silhouette_residuals(s, t, pose, out)?;
        }
        Ok(())
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.params_per_frame();
        let poses = self.decode(x);
        let mut out = Vec::new();
        for (t, pose) in poses.iter().enumerate() {
            self.frame_terms(t, pose, &mut out)?;
        }
        if self.lambda_t > 0.0 {
            let k = self.lambda_t.sqrt();
            for w in poses.windows(2) {
                out.extend(w[0].to_params().iter().zip(w[1].to_params()).map(|(a, b)| k * (a - b)));
            }
        }
        debug_assert!(x.len() == p * self.frames());
        Ok(out)
    }

    fn analytic_jacobian(&self, x: &[f64]) -> Result<SparseJacobian> {
        let p = self.params_per_frame();
        let np = self.skeleton.num_pose_params();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut frames = Vec::with_capacity(self.frames());
        for t in 0..self.frames() {
            let local = &x[t * p..(t + 1) * p];
            let (pose, dtheta) = self.frame_pose(t, local);
            let mut full = vec![0.0; np];
            if let Some(a) = &self.anchor {
                for k in 0..a.sqrt_w.len() {
                    full.iter_mut().for_each(|v| *v = 0.0);
                    full[k] = a.sqrt_w[k];
                    let mut row = Vec::new();
                    self.to_local(t, &full, &dtheta, 1.0, &mut row);
                    rows.push(row);
                }
            }
            if let Some(rp) = &self.reprojection {
                let fk = self.skeleton.fk_jacobian(&pose)?;
                for (v, view) in rp.views.iter().enumerate() {
                    let set = &rp.sets[v][t];
                    if set.is_empty() {
                        continue;
                    }
                    let k = (rp.lambda / (rp.views.len() * self.frames() * set.len()) as f64).sqrt();
                    for &i in set {
                        let jp: Matrix2x3<f64> = match view.camera.project_with_jacobian(&fk.positions[i]) {
                            Ok((_, j)) => j,
                            Err(CoreError::BehindCamera { .. }) => Matrix2x3::zeros(),
                            Err(e) => return Err(e.into()),
                        };
                        let j2 = jp * &fk.jacobians[i];
                        for r in 0..2 {
                            for (c, v) in full.iter_mut().enumerate() {
                                *v = k * j2[(r, c)];
                            }
                            let mut row = Vec::new();
                            self.to_local(t, &full, &dtheta, 1.0, &mut row);
                            rows.push(row);
                        }
                    }
                }
            }
            if let Some(s) = &self.silhouette {
                rows.extend(self.silhouette_jacobian(s, t, local)?);
            }
            frames.push(dtheta);
        }
        if self.lambda_t > 0.0 {
            let k = self.lambda_t.sqrt();
            for t in 0..self.frames().saturating_sub(1) {
                for c in 0..np {
                    let mut full = vec![0.0; np];
                    full[c] = k;
                    let mut row = Vec::new();
                    self.to_local(t, &full, &frames[t], 1.0, &mut row);
                    self.to_local(t + 1, &full, &frames[t + 1], -1.0, &mut row);
                    rows.push(row);
                }
            }
        }
        Ok(SparseJacobian {
            ncols: p * self.frames(),
            rows,
        })
    }

    /// Chamfer offsets differentiated with correspondences held fixed: each
    /// model sample stays at its arc fraction on its bone's capsule, and the
    /// capsule's motion is taken by central differences.
    fn silhouette_jacobian(&self, s: &Silhouette<'_>, t: usize, local: &[f64]) -> Result<Vec<Vec<(usize, f64)>>> {
        let observed = &s.obs[t].silhouette;
        let n = observed.len();
        if n < MIN_SILHOUETTE_POINTS {
            return Ok(Vec::new());
        }
        let p = self.params_per_frame();
        let (pose, _) = self.frame_pose(t, local);
        let Some(samples) = model_outline(s.camera, self.skeleton, &pose, s.body, n)? else {
            return Ok(vec![Vec::new(); 4 * n]);
        };
        let model: Vec<Vector2<f64>> = samples.iter().map(|m| m.point).collect();
        let edges = self.skeleton.edges();
        let place = |positions: &[Vector3<f64>], m: &OutlineSample| {
            let (a, b) = edges[m.shape];
            project_capsule(s.camera, &positions[a], &positions[b], s.body.radii[m.shape])
                .map_or(m.point, |st| st.outline_point(m.fraction * st.perimeter()))
        };
        // dm[j][c]: motion of model sample j along parameter c
        let mut dm = vec![vec![Vector2::zeros(); p]; n];
        let mut probe = local.to_vec();
        for c in 0..p {
            let h = 1e-6 * local[c].abs().max(1.0);
            probe[c] = local[c] + h;
            let hi = self.skeleton.forward_kinematics(&self.frame_pose(t, &probe).0)?;
            probe[c] = local[c] - h;
            let lo = self.skeleton.forward_kinematics(&self.frame_pose(t, &probe).0)?;
            probe[c] = local[c];
            for (j, m) in samples.iter().enumerate() {
                dm[j][c] = (place(&hi, m) - place(&lo, m)) / (2.0 * h);
            }
        }
        let k = self.silhouette_scale(s, n);
        let col0 = t * p;
        let row = |j: usize, axis: usize, sign: f64| -> Vec<(usize, f64)> {
            (0..p)
                .filter_map(|c| {
                    let v = sign * k * dm[j][c][axis];
                    (v != 0.0).then_some((col0 + c, v))
                })
                .collect()
        };
        let mut rows = Vec::with_capacity(4 * n);
        for o in observed {
            let j = nearest(o, &model);
            rows.push(row(j, 0, -1.0));
            rows.push(row(j, 1, -1.0));
        }
        for j in 0..n {
            rows.push(row(j, 0, 1.0));
            rows.push(row(j, 1, 1.0));
        }
        Ok(rows)
    }
}

impl LeastSquaresProblem for SequenceProblem<'_> {
    fn num_params(&self) -> usize {
        self.params_per_frame() * self.frames()
    }

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluate(x)
    }

    fn jacobian(&self, x: &[f64]) -> Option<Result<Jacobian>> {
        Some(self.analytic_jacobian(x).map(Jacobian::Sparse))
    }

    fn normal_bandwidth(&self) -> Option<usize> {
        Some(2 * self.params_per_frame() - 1)
    }
}
