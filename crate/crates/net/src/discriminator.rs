//! Discriminator forward and backward passes.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{NetError, Result};
use crate::layers::{sigmoid, GruCache};
use crate::params::{DiscriminatorParams, ParamSet};

pub struct DiscriminatorCache {
    batch: usize,
    gru: GruCache,
    last: Array2<f64>,
    prob: Vec<f64>,
}

/// Plausibility in `(0, 1)` of each sequence of a time-major batch.
pub fn forward_batch(params: &DiscriminatorParams, x: &Array2<f64>, batch: usize) -> Result<(Vec<f64>, DiscriminatorCache)> {
    if batch == 0 || x.nrows() % batch != 0 || x.nrows() == 0 {
        return Err(NetError::Shape(format!("{} rows do not split into {batch} sequences", x.nrows())));
    }
    if x.ncols() != params.input_channels() {
        return Err(NetError::Shape(format!(
            "motion rows have {} entries, the discriminator expects {}",
            x.ncols(),
            params.input_channels()
        )));
    }
    let frames = x.nrows() / batch;
    let gru = params.gru.forward(x.clone(), batch);
    let last = gru.h.slice(s![(frames - 1) * batch.., ..]).to_owned();
    let logits = params.head.forward(last.view());
    let prob: Vec<f64> = logits.iter().map(|&v| sigmoid(v)).collect();
    Ok((prob.clone(), DiscriminatorCache { batch, gru, last, prob }))
}

/// Parameter gradients and the gradient on the input rows, given the
/// gradient on each sequence's output probability.
pub fn backward_batch(params: &DiscriminatorParams, cache: &DiscriminatorCache, d_prob: &[f64]) -> Result<(DiscriminatorParams, Array2<f64>)> {
    let batch = cache.batch;
    if d_prob.len() != batch {
        return Err(NetError::Shape(format!("{} output gradients for {batch} sequences", d_prob.len())));
    }
    let mut grad = params.zeros_like();
    let d_logit = Array2::from_shape_fn((batch, 1), |(b, _)| d_prob[b] * cache.prob[b] * (1.0 - cache.prob[b]));
    let d_last = params.head.backward(cache.last.view(), &d_logit, &mut grad.head);
    let rows = cache.gru.h.nrows();
    let mut dh = Array2::zeros((rows, params.gru.hidden()));
    dh.slice_mut(s![rows - batch.., ..]).assign(&d_last);
    let dx = params.gru.backward(&cache.gru, &dh, &mut grad.gru);
    if let Some(layer) = grad.first_non_finite() {
        return Err(NetError::NonFiniteGradient { layer });
    }
    Ok((grad, dx))
}

/// Plausibility of one `T x 4N` quaternion sequence.
pub fn discriminator_forward(params: &DiscriminatorParams, quats: ArrayView2<f64>) -> Result<f64> {
    if quats.nrows() == 0 {
        return Err(NetError::InvalidInput("discriminator needs at least one frame".into()));
    }
    Ok(forward_batch(params, &quats.to_owned(), 1)?.0[0])
}
