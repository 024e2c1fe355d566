use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean squared error over every scalar, and its gradient.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len() as f64;
    let mut grad = Tensor::zeros(pred.shape().to_vec());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let r = p - t;
        loss += r * r;
        *g = 2.0 * r / n;
    }
    Ok((loss / n, grad))
}

/// Batch-mean softmax cross-entropy of `logits: [b, C]` against class ids.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let b = logits.batch();
    let c = logits.sample_len();
    if labels.len() != b {
        return Err(Error::dimension(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut grad = Tensor::zeros(logits.shape().to_vec());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::validation(format!("label {y} out of range for {c} classes")));
        }
        let z = logits.sample(i);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - z[y];
        let g = grad.sample_mut(i);
        for k in 0..c {
            g[k] = (z[k] - log_sum).exp() / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, grad))
}
