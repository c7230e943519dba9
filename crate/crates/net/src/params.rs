//! Architecture description and the learnable tensors of both networks.

use mocap_core::SkeletonModel;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::{BatchNorm, Conv1d, Gru, Linear};

pub const NUM_REGIONS: usize = 5;
/// Input channels per joint: four quaternion components and a confidence.
pub const JOINT_CHANNELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_joints: usize,
    /// Body region of each joint, as `Region::index`.
    pub regions: Vec<usize>,
    pub kernel: usize,
    pub global_width: usize,
    pub global_layers: usize,
    pub local_width: usize,
    pub gru_hidden: usize,
    /// Widths of the decoder's hidden affine layers; the last layer maps to
    /// `4 * n_joints`.
    pub decoder_widths: Vec<usize>,
    pub dropout: f64,
    pub disc_hidden: usize,
}

impl Architecture {
    pub fn for_skeleton(skeleton: &SkeletonModel) -> Self {
        Architecture {
            n_joints: skeleton.num_joints(),
            regions: skeleton.regions().iter().map(|r| r.index()).collect(),
            kernel: 7,
            global_width: 128,
            global_layers: 3,
            local_width: 16,
            gru_hidden: 256,
            decoder_widths: vec![256, 128],
            dropout: 0.1,
            disc_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::InvalidInput(m));
        if self.n_joints == 0 || self.regions.len() != self.n_joints {
            return bad(format!("{} region labels for {} joints", self.regions.len(), self.n_joints));
        }
        if let Some(r) = self.regions.iter().find(|&&r| r >= NUM_REGIONS) {
            return bad(format!("region index {r} out of range"));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel width must be odd, got {}", self.kernel));
        }
        let widths = [self.global_width, self.global_layers, self.local_width, self.gru_hidden, self.disc_hidden];
        if widths.contains(&0) || self.decoder_widths.contains(&0) {
            return bad("layer widths and counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        JOINT_CHANNELS * self.n_joints
    }

    pub fn output_channels(&self) -> usize {
        4 * self.n_joints
    }

    pub(crate) fn fused_width(&self) -> usize {
        self.global_width + NUM_REGIONS * self.local_width
    }

    fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.gru_hidden];
        widths.extend(&self.decoder_widths);
        widths.push(self.output_channels());
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Labels a tensor for checkpoints and error messages.
pub(crate) type Slot<'a> = (String, Vec<usize>, &'a [f64]);

fn conv_slots<'a>(name: &str, c: &'a Conv1d, out: &mut Vec<Slot<'a>>) {
    out.push((format!("{name}.weight"), c.weight.shape().to_vec(), c.weight.as_slice().expect("standard layout")));
    out.push((format!("{name}.bias"), c.bias.shape().to_vec(), c.bias.as_slice().expect("standard layout")));
}

fn conv_slots_mut<'a>(c: &'a mut Conv1d, out: &mut Vec<&'a mut [f64]>) {
    out.push(c.weight.as_slice_mut().expect("standard layout"));
    out.push(c.bias.as_slice_mut().expect("standard layout"));
}

fn linear_slots<'a>(name: &str, l: &'a Linear, out: &mut Vec<Slot<'a>>) {
    out.push((format!("{name}.weight"), l.weight.shape().to_vec(), l.weight.as_slice().expect("standard layout")));
    out.push((format!("{name}.bias"), l.bias.shape().to_vec(), l.bias.as_slice().expect("standard layout")));
}

fn linear_slots_mut<'a>(l: &'a mut Linear, out: &mut Vec<&'a mut [f64]>) {
    out.push(l.weight.as_slice_mut().expect("standard layout"));
    out.push(l.bias.as_slice_mut().expect("standard layout"));
}

fn gru_slots<'a>(name: &str, g: &'a Gru, out: &mut Vec<Slot<'a>>) {
    for (field, a) in [("w_input", &g.w_input), ("w_hidden", &g.w_hidden)] {
        out.push((format!("{name}.{field}"), a.shape().to_vec(), a.as_slice().expect("standard layout")));
    }
    for (field, a) in [("b_input", &g.b_input), ("b_hidden", &g.b_hidden)] {
        out.push((format!("{name}.{field}"), a.shape().to_vec(), a.as_slice().expect("standard layout")));
    }
}

fn gru_slots_mut<'a>(g: &'a mut Gru, out: &mut Vec<&'a mut [f64]>) {
    out.push(g.w_input.as_slice_mut().expect("standard layout"));
    out.push(g.w_hidden.as_slice_mut().expect("standard layout"));
    out.push(g.b_input.as_slice_mut().expect("standard layout"));
    out.push(g.b_hidden.as_slice_mut().expect("standard layout"));
}

/// Shared by both parameter sets: an ordered list of named tensors.
pub trait ParamSet: Clone {
    /// Learnable tensors in declared layer order.
    #[doc(hidden)]
    fn slots(&self) -> Vec<Slot<'_>>;
    #[doc(hidden)]
    fn slots_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.slots().iter().map(|s| s.2.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.slots().iter().flat_map(|s| s.2.iter().copied()).collect()
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(NetError::Shape(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut at = 0;
        for s in self.slots_mut() {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        }
        Ok(())
    }

    /// Same shapes, all zeros; the container gradients are accumulated in.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slots_mut() {
            s.fill(0.0);
        }
        z
    }

    /// First tensor holding a non-finite value.
    fn first_non_finite(&self) -> Option<String> {
        self.slots().into_iter().find(|s| !s.2.iter().all(|v| v.is_finite())).map(|s| s.0)
    }
}

/// Generator: global temporal convolutions with batch norm, per-joint local
/// convolutions pooled into region codes, a GRU and an affine decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub arch: Architecture,
    pub global: Vec<Conv1d>,
    pub norms: Vec<BatchNorm>,
    /// One convolution per joint over its own five channels.
    pub local: Vec<Conv1d>,
    pub gru: Gru,
    pub decoder: Vec<Linear>,
}

impl GeneratorParams {
    /// All tensors zero, batch norm at identity statistics.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let mut global = Vec::new();
        let mut input = arch.input_channels();
        for _ in 0..arch.global_layers {
            global.push(Conv1d::zeros(arch.kernel, input, arch.global_width));
            input = arch.global_width;
        }
        let mut gen = GeneratorParams {
            arch: arch.clone(),
            global,
            norms: vec![BatchNorm::new(arch.global_width); arch.global_layers],
            local: vec![Conv1d::zeros(arch.kernel, JOINT_CHANNELS, arch.local_width); arch.n_joints],
            gru: Gru::zeros(arch.fused_width(), arch.gru_hidden),
            decoder: arch.decoder_shapes().into_iter().map(|(i, o)| Linear::zeros(i, o)).collect(),
        };
        for n in &mut gen.norms {
            n.gamma.fill(0.0);
        }
        Ok(gen)
    }

    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut global = Vec::new();
        let mut input = arch.input_channels();
        for _ in 0..arch.global_layers {
            global.push(Conv1d::init(rng, arch.kernel, input, arch.global_width));
            input = arch.global_width;
        }
        let local = (0..arch.n_joints)
            .map(|_| Conv1d::init(rng, arch.kernel, JOINT_CHANNELS, arch.local_width))
            .collect();
        let gru = Gru::init(rng, arch.fused_width(), arch.gru_hidden);
        let decoder = arch.decoder_shapes().into_iter().map(|(i, o)| Linear::init(rng, i, o)).collect();
        Ok(GeneratorParams {
            arch: arch.clone(),
            global,
            norms: vec![BatchNorm::new(arch.global_width); arch.global_layers],
            local,
            gru,
            decoder,
        })
    }

    /// Batch-norm running statistics (not learnable), in layer order.
    pub(crate) fn buffers(&self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        for (i, n) in self.norms.iter().enumerate() {
            out.push((format!("norm.{i}.running_mean"), n.running_mean.shape().to_vec(), n.running_mean.as_slice().expect("standard layout")));
            out.push((format!("norm.{i}.running_var"), n.running_var.shape().to_vec(), n.running_var.as_slice().expect("standard layout")));
        }
        out
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for n in &mut self.norms {
            out.push(n.running_mean.as_slice_mut().expect("standard layout"));
            out.push(n.running_var.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

impl ParamSet for GeneratorParams {
    fn slots(&self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        for (i, (c, n)) in self.global.iter().zip(&self.norms).enumerate() {
            conv_slots(&format!("global.{i}"), c, &mut out);
            out.push((format!("norm.{i}.gamma"), n.gamma.shape().to_vec(), n.gamma.as_slice().expect("standard layout")));
            out.push((format!("norm.{i}.beta"), n.beta.shape().to_vec(), n.beta.as_slice().expect("standard layout")));
        }
        for (j, c) in self.local.iter().enumerate() {
            conv_slots(&format!("local.{j}"), c, &mut out);
        }
        gru_slots("gru", &self.gru, &mut out);
        for (i, l) in self.decoder.iter().enumerate() {
            linear_slots(&format!("decoder.{i}"), l, &mut out);
        }
        out
    }

    fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for (c, n) in self.global.iter_mut().zip(&mut self.norms) {
            conv_slots_mut(c, &mut out);
            out.push(n.gamma.as_slice_mut().expect("standard layout"));
            out.push(n.beta.as_slice_mut().expect("standard layout"));
        }
        for c in &mut self.local {
            conv_slots_mut(c, &mut out);
        }
        gru_slots_mut(&mut self.gru, &mut out);
        for l in &mut self.decoder {
            linear_slots_mut(l, &mut out);
        }
        out
    }
}

/// Discriminator: a GRU over motion-map rows whose final state is scored by
/// an affine layer and a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub gru: Gru,
    pub head: Linear,
}

impl DiscriminatorParams {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(DiscriminatorParams {
            gru: Gru::zeros(arch.output_channels(), arch.disc_hidden),
            head: Linear::zeros(arch.disc_hidden, 1),
        })
    }

    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        Ok(DiscriminatorParams {
            gru: Gru::init(rng, arch.output_channels(), arch.disc_hidden),
            head: Linear::init(rng, arch.disc_hidden, 1),
        })
    }

    pub fn input_channels(&self) -> usize {
        self.gru.w_input.nrows()
    }
}

impl ParamSet for DiscriminatorParams {
    fn slots(&self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        gru_slots("gru", &self.gru, &mut out);
        linear_slots("head", &self.head, &mut out);
        out
    }

    fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        gru_slots_mut(&mut self.gru, &mut out);
        linear_slots_mut(&mut self.head, &mut out);
        out
    }
}
