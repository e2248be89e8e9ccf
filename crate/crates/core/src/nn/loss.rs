#[cfg(test)]
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{shape_err, Result};
use crate::math;

/// Row-wise softmax of a `(batch, classes)` tensor, max-subtracted.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(shape_err!("softmax expects (batch, classes), got {:?}", logits.shape()));
    }
    let c = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let probs = softmax(logits)?;
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(shape_err!("{} labels for a batch of {}", labels.len(), b));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(shape_err!("label {bad} out of range for {c} classes"));
    }
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + math::ln(row.iter().map(|&v| math::exp(v - max)).sum::<f64>());
        loss += lse - row[y];
    }
    let inv = 1.0 / b as f64;
    let mut grad = probs;
    for (row, &y) in grad.data_mut().chunks_mut(c).zip(labels) {
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss * inv, grad))
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
pub(crate) fn row_sums(t: &Tensor) -> Vec<f64> {
    let c = t.shape()[1];
    t.data().chunks(c).map(|r| r.iter().sum()).collect()
}
