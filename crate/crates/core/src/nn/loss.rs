use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let k = out.cols();
    for row in out.values_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn check_labels(rows: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Input(format!("{} labels for {rows} samples", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let k = probs.cols();
    check_labels(probs.rows(), k, labels)?;
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| -probs.row(i)[y].ln()).sum();
    Ok(total / labels.len() as f64)
}

/// Cross-entropy evaluated through log-sum-exp, finite even when a softmax
/// probability underflows.
pub(crate) fn cross_entropy_from_logits(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let k = logits.cols();
    check_labels(logits.rows(), k, labels)?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Inter-domain distance: per-sample L1 distance between two probability
/// matrices, averaged over the batch.
pub fn idd_loss(probs1: &Tensor, probs2: &Tensor) -> Result<f64> {
    if probs1.shape() != probs2.shape() || probs1.shape().len() != 2 {
        return Err(Error::Input(format!(
            "idd needs two equal batch x K matrices, got {:?} and {:?}",
            probs1.shape(),
            probs2.shape()
        )));
    }
    let total: f64 = probs1.values().iter().zip(probs2.values()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / probs1.rows() as f64)
}

/// Gradients of [`idd_loss`] with respect to each argument. The subgradient
/// at equal entries is zero.
pub(crate) fn idd_prob_grads(probs1: &Tensor, probs2: &Tensor) -> (Tensor, Tensor) {
    let scale = 1.0 / probs1.rows() as f64;
    let mut g1 = probs1.zeros_like();
    let mut g2 = probs1.zeros_like();
    for ((a, b), (d1, d2)) in probs1
        .values()
        .iter()
        .zip(probs2.values())
        .zip(g1.values_mut().iter_mut().zip(g2.values_mut()))
    {
        if a > b {
            *d1 = scale;
            *d2 = -scale;
        } else if a < b {
            *d1 = -scale;
            *d2 = scale;
        }
    }
    (g1, g2)
}

/// Maps a gradient with respect to softmax outputs to one with respect to
/// the logits: `p * (g - <g, p>)` per row.
pub(crate) fn softmax_backward(probs: &Tensor, grad: &Tensor) -> Tensor {
    let k = probs.cols();
    let mut out = probs.zeros_like();
    for ((p, g), o) in probs
        .values()
        .chunks(k)
        .zip(grad.values().chunks(k))
        .zip(out.values_mut().chunks_mut(k))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((oi, pi), gi) in o.iter_mut().zip(p).zip(g) {
            *oi = pi * (gi - dot);
        }
    }
    out
}
