//! Softmax cross-entropy loss and classification accuracy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decodes a label tensor entry into a class index, validating range.
pub(crate) fn label_index<T: Scalar>(label: T, classes: usize) -> Result<usize> {
    let raw = label.to_acc();
    let idx = raw as i64;
    if idx < 0 || idx as usize >= classes || (idx as f64 - raw).abs() > 0.0 {
        return Err(Error::LabelOutOfRange {
            label: raw as i64,
            classes,
        });
    }
    Ok(idx as usize)
}

/// Row-wise log-sum-exp with max subtraction; finite for finite logits.
fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for &z in row {
        acc += (z - m).exp();
    }
    m + acc.ln()
}

/// Mean softmax cross-entropy and accuracy over a batch of logits.
///
/// Loss is mean over rows of `logsumexp(z) - z[label]`; accuracy is the
/// fraction of rows whose argmax equals the label, ties resolving to the
/// lowest class index.
pub fn loss_and_accuracy<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<(T, T)> {
    if logits.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    }
    let (b, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.rows() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows vs {} labels",
            b,
            labels.rows()
        )));
    }
    let mut loss_acc = 0.0f64;
    let mut correct = 0usize;
    for r in 0..b {
        let row: Vec<f64> = logits.row(r).iter().map(|v| v.to_acc()).collect();
        let y = label_index(labels.data()[r], classes)?;
        loss_acc += logsumexp(&row) - row[y];
        if argmax(&row) == y {
            correct += 1;
        }
    }
    Ok((
        T::from_acc(loss_acc / b as f64),
        T::from_acc(correct as f64 / b as f64),
    ))
}

/// First index of the maximum value (lowest class index wins ties).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gradient of the mean cross-entropy with respect to the logits:
/// `(softmax(z) - onehot(y)) / batch`.
pub fn softmax_xent_grad<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.rows() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows vs {} labels",
            b,
            labels.rows()
        )));
    }
    let inv_b = 1.0 / b as f64;
    let mut grad = Vec::with_capacity(b * classes);
    for r in 0..b {
        let row: Vec<f64> = logits.row(r).iter().map(|v| v.to_acc()).collect();
        let y = label_index(labels.data()[r], classes)?;
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        let exps: Vec<f64> = row
            .iter()
            .map(|&z| {
                let e = (z - m).exp();
                denom += e;
                e
            })
            .collect();
        for (c, e) in exps.iter().enumerate() {
            let p = e / denom;
            let target = if c == y { 1.0 } else { 0.0 };
            grad.push(T::from_acc((p - target) * inv_b));
        }
    }
    Tensor::new(vec![b, classes], grad)
}
