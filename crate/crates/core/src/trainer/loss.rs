use ndarray::{Array2, Axis};

use super::{Result, TrainerError};

pub const CRITERIA: [&str; 2] = ["cross_entropy", "mse"];

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(TrainerError::ShapeMismatch(format!("{} labels for {batch} rows", labels.len())));
    }
    if batch == 0 {
        return Err(TrainerError::EmptyBatch);
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TrainerError::LabelOutOfRange { label, classes });
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let top = (0..classes).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        let max = row[top];
        // ln(1 + rest) keeps tiny losses for confident rows
        let rest: f64 = (0..classes).filter(|&j| j != top).map(|j| (row[j] - max).exp()).sum();
        loss += (max - row[y]) + rest.ln_1p();
        grad[[i, y]] -= 1.0;
    }
    let b = batch as f64;
    grad.mapv_inplace(|g| g / b);
    Ok((loss / b, grad))
}

/// Mean squared error over every element, and its gradient.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(TrainerError::ShapeMismatch(format!("{:?} vs {:?}", pred.dim(), target.dim())));
    }
    if pred.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.mapv(|d| 2.0 * d / n)))
}
