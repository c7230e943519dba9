//! Layers with hand-written backward passes.
//!
//! Activations are `(frames * batch) x channels` matrices in time-major row
//! order: row `t * batch + b` holds frame `t` of sequence `b`, so one time
//! step of a batch is a contiguous block of rows.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn uniform(rng: &mut impl Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

/// Each row followed by its `kernel - 1` temporal neighbours (centred), zero
/// past either end of its own sequence.
pub(crate) fn im2col(x: ArrayView2<f64>, batch: usize, kernel: usize) -> Array2<f64> {
    let (rows, c) = x.dim();
    let frames = rows / batch;
    let half = (kernel / 2) as isize;
    let mut out = Array2::zeros((rows, kernel * c));
    for t in 0..frames {
        for k in 0..kernel {
            let src = t as isize + k as isize - half;
            if src < 0 || src >= frames as isize {
                continue;
            }
            let src = src as usize;
            out.slice_mut(s![t * batch..(t + 1) * batch, k * c..(k + 1) * c])
                .assign(&x.slice(s![src * batch..(src + 1) * batch, ..]));
        }
    }
    out
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(d: ArrayView2<f64>, batch: usize, kernel: usize, c: usize) -> Array2<f64> {
    let rows = d.nrows();
    let frames = rows / batch;
    let half = (kernel / 2) as isize;
    let mut out = Array2::zeros((rows, c));
    for t in 0..frames {
        for k in 0..kernel {
            let src = t as isize + k as isize - half;
            if src < 0 || src >= frames as isize {
                continue;
            }
            let src = src as usize;
            let mut dst = out.slice_mut(s![src * batch..(src + 1) * batch, ..]);
            dst += &d.slice(s![t * batch..(t + 1) * batch, k * c..(k + 1) * c]);
        }
    }
    out
}

pub(crate) fn elu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { v.exp_m1() });
}

/// Multiplies `d` by the ELU derivative, read off the layer's output.
pub(crate) fn elu_backward(d: &mut Array2<f64>, out: &Array2<f64>) {
    Zip::from(d).and(out).for_each(|d, &y| {
        if y <= 0.0 {
            *d *= y + 1.0;
        }
    });
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Linear {
            weight: uniform(rng, (input, output), bound),
            bias: Array1::zeros(output),
        }
    }

    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub(crate) fn backward(&self, x: ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

/// Temporal convolution with "same" padding; the weight is stored as
/// `(kernel * in) x out`, tap-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub kernel: usize,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv1d {
    pub fn zeros(kernel: usize, input: usize, output: usize) -> Self {
        Conv1d {
            kernel,
            weight: Array2::zeros((kernel * input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn init(rng: &mut impl Rng, kernel: usize, input: usize, output: usize) -> Self {
        let bound = (6.0 / (kernel * input + output) as f64).sqrt();
        Conv1d {
            kernel,
            weight: uniform(rng, (kernel * input, output), bound),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.weight.nrows() / self.kernel
    }

    /// Output and the unrolled input kept for the backward pass.
    pub(crate) fn forward(&self, x: ArrayView2<f64>, batch: usize) -> (Array2<f64>, Array2<f64>) {
        let cols = im2col(x, batch, self.kernel);
        let y = cols.dot(&self.weight) + &self.bias;
        (y, cols)
    }

    pub(crate) fn backward_params(&self, cols: &Array2<f64>, dy: &Array2<f64>, grad: &mut Conv1d) {
        general_mat_mul(1.0, &cols.t(), dy, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
    }

    pub(crate) fn backward_input(&self, dy: &Array2<f64>, batch: usize) -> Array2<f64> {
        col2im(dy.dot(&self.weight.t()).view(), batch, self.kernel, self.input_channels())
    }
}

/// Per-channel normalization over all rows of the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

pub(crate) struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Whether the statistics came from the batch (and so depend on it).
    batch_stats: bool,
    pub(crate) mean: Array1<f64>,
    pub(crate) var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<f64>, train: bool) -> (Array2<f64>, NormCache) {
        let (mean, var) = if train {
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let var = (x - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (
            y,
            NormCache {
                xhat,
                inv_std,
                batch_stats: train,
                mean,
                var,
            },
        )
    }

    pub(crate) fn update_running(&mut self, cache: &NormCache) {
        self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &cache.mean * BN_MOMENTUM;
        self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + &cache.var * BN_MOMENTUM;
    }

    pub(crate) fn backward(&self, cache: &NormCache, dy: &Array2<f64>, grad: &mut BatchNorm) -> Array2<f64> {
        let dy_xhat = dy * &cache.xhat;
        let sum_dy = dy.sum_axis(Axis(0));
        let sum_dy_xhat = dy_xhat.sum_axis(Axis(0));
        grad.gamma += &sum_dy_xhat;
        grad.beta += &sum_dy;
        let scale = &self.gamma * &cache.inv_std;
        if !cache.batch_stats {
            return dy * &scale;
        }
        let n = dy.nrows() as f64;
        let centred = dy - &(sum_dy / n) - &(&cache.xhat * &(sum_dy_xhat / n));
        centred * &scale
    }
}

/// Single-layer GRU, gates ordered `[reset, update, candidate]`:
///
/// ```text
/// r = σ(x Wr + h Ur + ..)   z = σ(x Wz + h Uz + ..)
/// n = tanh(x Wn + bn + r ∘ (h Un + cn))   h' = (1 - z) ∘ n + z ∘ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub b_input: Array1<f64>,
    pub b_hidden: Array1<f64>,
}

pub(crate) struct GruCache {
    x: Array2<f64>,
    pub(crate) h: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    hn: Array2<f64>,
    batch: usize,
}

impl Gru {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Gru {
            w_input: Array2::zeros((input, 3 * hidden)),
            w_hidden: Array2::zeros((hidden, 3 * hidden)),
            b_input: Array1::zeros(3 * hidden),
            b_hidden: Array1::zeros(3 * hidden),
        }
    }

    /// Uniform in `±1/sqrt(hidden)`, biases included.
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Gru {
            w_input: uniform(rng, (input, 3 * hidden), k),
            w_hidden: uniform(rng, (hidden, 3 * hidden), k),
            b_input: Array1::from_shape_simple_fn(3 * hidden, || rng.random_range(-k..=k)),
            b_hidden: Array1::from_shape_simple_fn(3 * hidden, || rng.random_range(-k..=k)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }

    /// Hidden states for every row of `x`, starting from zero.
    pub(crate) fn forward(&self, x: Array2<f64>, batch: usize) -> GruCache {
        let hs = self.hidden();
        let rows = x.nrows();
        let frames = rows / batch;
        let xg = x.dot(&self.w_input) + &self.b_input;
        let mut h = Array2::zeros((rows, hs));
        let mut r = Array2::zeros((rows, hs));
        let mut z = Array2::zeros((rows, hs));
        let mut n = Array2::zeros((rows, hs));
        let mut hn = Array2::zeros((rows, hs));
        let mut prev = Array2::<f64>::zeros((batch, hs));
        for t in 0..frames {
            let rs = t * batch..(t + 1) * batch;
            let hg = prev.dot(&self.w_hidden) + &self.b_hidden;
            let xt = xg.slice(s![rs.clone(), ..]);
            for b in 0..batch {
                let row = t * batch + b;
                for i in 0..hs {
                    let rv = sigmoid(xt[[b, i]] + hg[[b, i]]);
                    let zv = sigmoid(xt[[b, hs + i]] + hg[[b, hs + i]]);
                    let hnv = hg[[b, 2 * hs + i]];
                    let nv = (xt[[b, 2 * hs + i]] + rv * hnv).tanh();
                    r[[row, i]] = rv;
                    z[[row, i]] = zv;
                    n[[row, i]] = nv;
                    hn[[row, i]] = hnv;
                    h[[row, i]] = (1.0 - zv) * nv + zv * prev[[b, i]];
                }
            }
            prev.assign(&h.slice(s![rs, ..]));
        }
        GruCache {
            x,
            h,
            r,
            z,
            n,
            hn,
            batch,
        }
    }

    /// Backpropagation through time from `dh` (gradient on every hidden
    /// state); accumulates into `grad` and returns `dL/dx`.
    pub(crate) fn backward(&self, cache: &GruCache, dh: &Array2<f64>, grad: &mut Gru) -> Array2<f64> {
        let hs = self.hidden();
        let batch = cache.batch;
        let rows = dh.nrows();
        let frames = rows / batch;
        let mut gx = Array2::zeros((rows, 3 * hs));
        let mut carry = Array2::<f64>::zeros((batch, hs));
        let mut gh = Array2::<f64>::zeros((batch, 3 * hs));
        let mut direct = Array2::<f64>::zeros((batch, hs));
        for t in (0..frames).rev() {
            for b in 0..batch {
                let row = t * batch + b;
                for i in 0..hs {
                    let d = dh[[row, i]] + carry[[b, i]];
                    let (r, z, n, hn) = (cache.r[[row, i]], cache.z[[row, i]], cache.n[[row, i]], cache.hn[[row, i]]);
                    let prev = if t > 0 { cache.h[[row - batch, i]] } else { 0.0 };
                    let dn = d * (1.0 - z) * (1.0 - n * n);
                    let dz = d * (prev - n) * z * (1.0 - z);
                    let dr = dn * hn * r * (1.0 - r);
                    gx[[row, i]] = dr;
                    gx[[row, hs + i]] = dz;
                    gx[[row, 2 * hs + i]] = dn;
                    gh[[b, i]] = dr;
                    gh[[b, hs + i]] = dz;
                    gh[[b, 2 * hs + i]] = dn * r;
                    direct[[b, i]] = d * z;
                }
            }
            grad.b_hidden += &gh.sum_axis(Axis(0));
            if t > 0 {
                let prev = cache.h.slice(s![(t - 1) * batch..t * batch, ..]);
                general_mat_mul(1.0, &prev.t(), &gh, 1.0, &mut grad.w_hidden);
            }
            carry.assign(&direct);
            general_mat_mul(1.0, &gh, &self.w_hidden.t(), 1.0, &mut carry);
        }
        general_mat_mul(1.0, &cache.x.t(), &gx, 1.0, &mut grad.w_input);
        grad.b_input += &gx.sum_axis(Axis(0));
        gx.dot(&self.w_input.t())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (batch, frames, c, k) = (2, 6, 3, 5);
        let x = uniform(&mut rng, (batch * frames, c), 1.0);
        let d = uniform(&mut rng, (batch * frames, k * c), 1.0);
        let lhs = (&im2col(x.view(), batch, k) * &d).sum();
        let rhs = (&x * &col2im(d.view(), batch, k, c)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn im2col_pads_each_sequence_separately() {
        // two sequences of three frames, one channel
        let x = Array2::from_shape_vec((6, 1), vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let cols = im2col(x.view(), 2, 3);
        assert_eq!(cols.row(0).to_vec(), vec![0.0, 1.0, 2.0]);
        assert_eq!(cols.row(3).to_vec(), vec![10.0, 20.0, 30.0]);
        assert_eq!(cols.row(5).to_vec(), vec![20.0, 30.0, 0.0]);
    }

    #[test]
    fn zero_gru_stays_at_zero() {
        let gru = Gru::zeros(3, 4);
        let cache = gru.forward(Array2::ones((10, 3)), 2);
        assert!(cache.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_norm_uses_running_statistics() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = Array1::from(vec![1.0, -1.0]);
        bn.running_var = Array1::from(vec![4.0 - BN_EPS, 1.0 - BN_EPS]);
        let x = Array2::from_shape_vec((1, 2), vec![3.0, 0.0]).unwrap();
        let (y, _) = bn.forward(&x, false);
        assert!((y[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((y[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
