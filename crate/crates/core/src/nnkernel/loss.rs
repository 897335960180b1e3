use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Predictions are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Clamp in binary64: `1 - 1e-7` has no exact binary32 neighbour.
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean binary cross-entropy and its gradient with respect to `pred`.
///
/// The loss is reduced in binary64, sequentially in row-major order. The
/// gradient is taken at the clamped prediction.
pub fn bce_loss(pred: &Matrix, target: &Matrix) -> Result<(f32, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.as_slice().len();
    if n == 0 {
        return Ok((0.0, pred.clone()));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let p = clamp_prob(p as f64);
        let t = t as f64;
        total += t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        *g = ((-t / p + (1.0 - t) / (1.0 - p)) * inv_n) as f32;
    }
    Ok(((-total * inv_n) as f32, grad))
}

/// Mean softmax cross-entropy over rows of `logits` against class `labels`,
/// with its gradient `(softmax - onehot) / n`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f32, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let classes = logits.cols();
    let n = logits.rows();
    if n == 0 {
        return Ok((0.0, logits.clone()));
    }
    let inv_n = 1.0 / n as f32;
    let mut total = 0.0f64;
    let mut grad = Matrix::zeros(n, classes);
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Data {
                offset: r as u64,
                reason: format!("label {label} outside {classes} classes"),
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        let g = grad.row_mut(r);
        for (gv, &z) in g.iter_mut().zip(row) {
            *gv = (z - max).exp();
            sum += *gv;
        }
        total += -((row[label] - max) as f64 - (sum as f64).ln());
        for (c, gv) in g.iter_mut().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            *gv = (*gv / sum - target) * inv_n;
        }
    }
    Ok(((total / n as f64) as f32, grad))
}
