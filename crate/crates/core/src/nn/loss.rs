//! Softmax cross-entropy, computed with a max-shifted log-sum-exp.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&u| (u - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Cross-entropy of a single sample: `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::RejectedInput(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|&u| (u - m).exp()).sum::<f64>().ln() + m;
    Ok((lse - logits[label]).max(0.0))
}

/// Per-sample cross-entropy over a `[n, k]` logit tensor.
pub fn per_sample_losses(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let n = logits.rows();
    if labels.len() != n {
        return Err(Error::RejectedInput(format!(
            "{} labels for {} logit rows",
            labels.len(),
            n
        )));
    }
    (0..n)
        .map(|i| cross_entropy(logits.row(i), labels[i]))
        .collect()
}

pub fn mean_loss(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    }
}

/// Gradient of the batch-mean cross-entropy w.r.t. the logits:
/// `(softmax(u) - onehot(label)) / n` per row.
pub fn mean_ce_logit_grad(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let n = logits.rows();
    let k = logits.row_len();
    if labels.len() != n {
        return Err(Error::RejectedInput(format!(
            "{} labels for {} logit rows",
            labels.len(),
            n
        )));
    }
    let mut grad = Tensor::zeros(vec![n, k]);
    let scale = 1.0 / n as f64;
    for i in 0..n {
        if labels[i] >= k {
            return Err(Error::RejectedInput(format!(
                "label {} out of range for {k} logits",
                labels[i]
            )));
        }
        let p = softmax(logits.row(i));
        let row = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, (g, pj)) in row.iter_mut().zip(p).enumerate() {
            *g = (pj - if j == labels[i] { 1.0 } else { 0.0 }) * scale;
        }
    }
    Ok(grad)
}
