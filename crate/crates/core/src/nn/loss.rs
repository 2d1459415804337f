//! Softmax cross-entropy with its gradient.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Mean cross-entropy of `logits [n, c]` against 1-based class labels,
/// and the gradient w.r.t. the logits, `(softmax - onehot) / n`.
/// Computed through log-sum-exp with max subtraction so it stays finite
/// for large logit magnitudes.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::shape(format!("logits must be [n, c], got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::param("empty batch"));
    }
    for &label in labels {
        if label < 1 || label > c {
            return Err(Error::param(format!("label {label} outside [1, {c}]")));
        }
    }
    logits.ensure_finite("cross-entropy logits")?;

    let data = logits.data();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * c];
    for (i, &label) in labels.iter().enumerate() {
        let row = &data[i * c..(i + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = max + sum_exp.ln();
        loss += log_sum - row[label - 1];
        let grad_row = &mut grad[i * c..(i + 1) * c];
        for (j, g) in grad_row.iter_mut().enumerate() {
            *g = (row[j] - log_sum).exp() * inv_n;
        }
        grad_row[label - 1] -= inv_n;
    }
    loss *= inv_n;
    if !loss.is_finite() {
        return Err(Error::numeric("cross-entropy loss is non-finite"));
    }
    Ok((loss, Tensor::new(vec![n, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_five_way_predictor_loses_ln5() {
        let logits = Tensor::zeros(vec![3, 5]);
        let (loss, _) = softmax_cross_entropy(&logits, &[1, 3, 5]).unwrap();
        assert!((loss - 5.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let mut logits = Tensor::zeros(vec![1, 4]);
        logits.data_mut()[2] = 50.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn stays_finite_for_huge_logits() {
        let logits = Tensor::new(vec![1, 3], vec![1e3, -1e3, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.is_finite());
        grad.ensure_finite("grad").unwrap();
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let logits = Tensor::zeros(vec![2, 3]);
        assert!(softmax_cross_entropy(&logits, &[0, 1]).is_err());
        assert!(softmax_cross_entropy(&logits, &[1, 4]).is_err());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.0, 0.5, -0.5]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[1, 3]).unwrap();
        for row in grad.data().chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }
}
