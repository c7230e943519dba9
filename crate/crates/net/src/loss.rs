//! Sparse-view, adversarial and discriminator losses.

use ndarray::{Array2, ArrayView2};

use crate::error::{NetError, Result};

/// Weight of the unit-norm penalty in the sparse-view loss.
pub const LAMBDA_QUAT: f64 = 1e-5;

fn check_shapes(pred: &ArrayView2<f64>, reference: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != reference.dim() {
        return Err(NetError::Shape(format!("prediction {:?} vs reference {:?}", pred.dim(), reference.dim())));
    }
    if pred.ncols() % 4 != 0 {
        return Err(NetError::Shape(format!("{} columns is not a whole number of quaternions", pred.ncols())));
    }
    Ok(())
}

/// Squared distance to the reference summed over all entries, plus
/// `lambda_quat` times the squared deviation of every 4-block's norm from 1.
pub fn loss_sv(pred: ArrayView2<f64>, reference: ArrayView2<f64>, lambda_quat: f64) -> Result<f64> {
    check_shapes(&pred, &reference)?;
    let fit: f64 = pred.iter().zip(reference.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let mut norm = 0.0;
    for row in pred.rows() {
        let row: Vec<f64> = row.iter().copied().collect();
        for q in row.chunks(4) {
            let dev = q.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0;
            norm += dev * dev;
        }
    }
    Ok(fit + lambda_quat * norm)
}

/// Gradient of [`loss_sv`] with respect to `pred`. A zero block has no
/// defined norm direction and gets no penalty gradient.
pub fn loss_sv_grad(pred: ArrayView2<f64>, reference: ArrayView2<f64>, lambda_quat: f64) -> Result<Array2<f64>> {
    check_shapes(&pred, &reference)?;
    let mut g = (&pred - &reference) * 2.0;
    for (mut grow, prow) in g.rows_mut().into_iter().zip(pred.rows()) {
        let p: Vec<f64> = prow.iter().copied().collect();
        for (k, q) in p.chunks(4).enumerate() {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                let scale = 2.0 * lambda_quat * (n - 1.0) / n;
                for (i, qv) in q.iter().enumerate() {
                    grow[4 * k + i] += scale * qv;
                }
            }
        }
    }
    Ok(g)
}

/// `(d_fake - 1)^2`.
pub fn loss_adv(d_fake: f64) -> f64 {
    (d_fake - 1.0) * (d_fake - 1.0)
}

/// `(d_real - 1)^2 + d_fake^2`.
pub fn loss_disc(d_real: f64, d_fake: f64) -> f64 {
    (d_real - 1.0) * (d_real - 1.0) + d_fake * d_fake
}
