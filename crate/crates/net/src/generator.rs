//! Generator forward and backward passes.

use mocap_core::MotionMap;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NetError, Result};
use crate::layers::{elu, elu_backward, GruCache, NormCache};
use crate::params::{GeneratorParams, ParamSet, JOINT_CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout; the mask is drawn from the seed.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

/// Everything the backward pass needs from one forward pass.
pub struct GeneratorCache {
    batch: usize,
    global_cols: Vec<Array2<f64>>,
    norms: Vec<NormCache>,
    global_out: Vec<Array2<f64>>,
    local_cols: Vec<Array2<f64>>,
    local_out: Vec<Array2<f64>>,
    gru: GruCache,
    mask: Option<Array2<f64>>,
    /// Input of each decoder layer (the dropped-out GRU states first).
    decoder_in: Vec<Array2<f64>>,
}

impl GeneratorCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Stacks sequences into the time-major input matrix, channels per joint
/// ordered `[w, x, y, z, confidence]`.
pub fn input_matrix(motions: &[&MotionMap]) -> Result<Array2<f64>> {
    let first = motions.first().ok_or_else(|| NetError::InvalidInput("empty batch".into()))?;
    let (frames, n) = (first.frames(), first.n_joints());
    if motions.iter().any(|m| m.frames() != frames || m.n_joints() != n) {
        return Err(NetError::Shape("sequences in a batch must share length and joint count".into()));
    }
    let batch = motions.len();
    let mut x = Array2::zeros((frames * batch, JOINT_CHANNELS * n));
    for (b, m) in motions.iter().enumerate() {
        for t in 0..frames {
            let mut row = x.row_mut(t * batch + b);
            for (j, (q, &c)) in m.quat_row(t).chunks(4).zip(m.conf_row(t)).enumerate() {
                for k in 0..4 {
                    row[JOINT_CHANNELS * j + k] = q[k];
                }
                row[JOINT_CHANNELS * j + 4] = c;
            }
        }
    }
    Ok(x)
}

/// Time-major quaternion rows of several sequences, as the discriminator
/// and the losses see them.
pub fn quat_matrix(motions: &[&MotionMap]) -> Result<Array2<f64>> {
    let first = motions.first().ok_or_else(|| NetError::InvalidInput("empty batch".into()))?;
    let (frames, n) = (first.frames(), first.n_joints());
    if motions.iter().any(|m| m.frames() != frames || m.n_joints() != n) {
        return Err(NetError::Shape("sequences in a batch must share length and joint count".into()));
    }
    let batch = motions.len();
    let mut x = Array2::zeros((frames * batch, 4 * n));
    for (b, m) in motions.iter().enumerate() {
        for t in 0..frames {
            x.row_mut(t * batch + b).assign(&ndarray::ArrayView1::from(m.quat_row(t)));
        }
    }
    Ok(x)
}

/// Rows of sequence `b` out of a time-major batch matrix.
pub fn sequence_rows(x: &Array2<f64>, batch: usize, b: usize) -> Array2<f64> {
    x.slice(s![b..;batch, ..]).to_owned()
}

/// Forward pass over a time-major batch `x` of `batch` sequences.
pub fn forward_batch(params: &GeneratorParams, x: &Array2<f64>, batch: usize, mode: Mode) -> Result<(Array2<f64>, GeneratorCache)> {
    let arch = &params.arch;
    if batch == 0 || x.nrows() % batch != 0 {
        return Err(NetError::Shape(format!("{} rows do not split into {batch} sequences", x.nrows())));
    }
    if x.ncols() != arch.input_channels() {
        return Err(NetError::Shape(format!(
            "input has {} channels, the network expects {}",
            x.ncols(),
            arch.input_channels()
        )));
    }
    let frames = x.nrows() / batch;
    if frames < arch.kernel {
        return Err(NetError::SequenceTooShort { frames, kernel: arch.kernel });
    }
    let train = matches!(mode, Mode::Train { .. });

    // global branch
    let mut global_cols = Vec::new();
    let mut norms = Vec::new();
    let mut global_out: Vec<Array2<f64>> = Vec::new();
    for (conv, norm) in params.global.iter().zip(&params.norms) {
        let input = global_out.last().unwrap_or(x);
        let (y, cols) = conv.forward(input.view(), batch);
        let (mut a, nc) = norm.forward(&y, train);
        elu(&mut a);
        global_cols.push(cols);
        norms.push(nc);
        global_out.push(a);
    }

    // local branch, pooled by region
    let lw = arch.local_width;
    let rows = x.nrows();
    let mut fused = Array2::zeros((rows, arch.fused_width()));
    fused.slice_mut(s![.., ..arch.global_width]).assign(global_out.last().expect("at least one global layer"));
    let mut local_cols = Vec::new();
    let mut local_out = Vec::new();
    for (j, conv) in params.local.iter().enumerate() {
        let xj = x.slice(s![.., JOINT_CHANNELS * j..JOINT_CHANNELS * (j + 1)]);
        let (mut y, cols) = conv.forward(xj, batch);
        elu(&mut y);
        let at = arch.global_width + arch.regions[j] * lw;
        let mut region = fused.slice_mut(s![.., at..at + lw]);
        region += &y;
        local_cols.push(cols);
        local_out.push(y);
    }

    let gru = params.gru.forward(fused, batch);
    let mut h = gru.h.clone();
    let mask = match mode {
        Mode::Train { dropout_seed } if arch.dropout > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let keep = 1.0 - arch.dropout;
            let m = Array2::from_shape_simple_fn(h.dim(), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            h *= &m;
            Some(m)
        }
        _ => None,
    };

    let mut decoder_in = Vec::new();
    let last = params.decoder.len() - 1;
    for (i, layer) in params.decoder.iter().enumerate() {
        let mut y = layer.forward(h.view());
        if i < last {
            elu(&mut y);
        }
        decoder_in.push(h);
        h = y;
    }
    let cache = GeneratorCache {
        batch,
        global_cols,
        norms,
        global_out,
        local_cols,
        local_out,
        gru,
        mask,
        decoder_in,
    };
    Ok((h, cache))
}

/// Gradient of a loss with respect to every generator parameter, given its
/// gradient `d_out` on the forward output.
pub fn backward_batch(params: &GeneratorParams, cache: &GeneratorCache, d_out: &Array2<f64>) -> Result<GeneratorParams> {
    let arch = &params.arch;
    let batch = cache.batch;
    let mut grad = params.zeros_like();

    let mut d = d_out.clone();
    let last = params.decoder.len() - 1;
    for i in (0..params.decoder.len()).rev() {
        if i < last {
            // this layer's output is the next layer's input
            elu_backward(&mut d, &cache.decoder_in[i + 1]);
        }
        d = params.decoder[i].backward(cache.decoder_in[i].view(), &d, &mut grad.decoder[i]);
    }
    if let Some(m) = &cache.mask {
        d *= m;
    }
    let d_fused = params.gru.backward(&cache.gru, &d, &mut grad.gru);

    let lw = arch.local_width;
    for (j, conv) in params.local.iter().enumerate() {
        let at = arch.global_width + arch.regions[j] * lw;
        let mut dj = d_fused.slice(s![.., at..at + lw]).to_owned();
        elu_backward(&mut dj, &cache.local_out[j]);
        conv.backward_params(&cache.local_cols[j], &dj, &mut grad.local[j]);
    }

    let mut d = d_fused.slice(s![.., ..arch.global_width]).to_owned();
    for l in (0..params.global.len()).rev() {
        elu_backward(&mut d, &cache.global_out[l]);
        let dy = params.norms[l].backward(&cache.norms[l], &d, &mut grad.norms[l]);
        params.global[l].backward_params(&cache.global_cols[l], &dy, &mut grad.global[l]);
        if l > 0 {
            d = params.global[l].backward_input(&dy, batch);
        }
    }
    if let Some(layer) = grad.first_non_finite() {
        return Err(NetError::NonFiniteGradient { layer });
    }
    Ok(grad)
}

/// Folds the batch statistics of a training pass into the running ones.
pub fn update_running_stats(params: &mut GeneratorParams, cache: &GeneratorCache) {
    for (norm, nc) in params.norms.iter_mut().zip(&cache.norms) {
        norm.update_running(nc);
    }
}

/// Corrected quaternions (`T x 4N`) for one motion map.
pub fn generator_forward(params: &GeneratorParams, motion: &MotionMap, mode: Mode) -> Result<Array2<f64>> {
    if motion.n_joints() != params.arch.n_joints {
        return Err(NetError::Shape(format!(
            "motion has {} joints, the network {}",
            motion.n_joints(),
            params.arch.n_joints
        )));
    }
    let x = input_matrix(&[motion])?;
    Ok(forward_batch(params, &x, 1, mode)?.0)
}

/// Runs the generator in eval mode and packs its output with the input's
/// confidences and translations.
pub fn correct_motion(params: &GeneratorParams, motion: &MotionMap) -> Result<MotionMap> {
    let q = generator_forward(params, motion, Mode::Eval)?;
    let quats = q.as_standard_layout().iter().copied().collect();
    Ok(motion.with_quats(quats)?)
}
