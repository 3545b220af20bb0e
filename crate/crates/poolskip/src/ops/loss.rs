//! Mean softmax cross-entropy with its analytic gradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Returns `(loss, grad_logits)` where the loss is the mean negative
/// log-softmax of the true class and the gradient is
/// `(softmax - onehot) / batch`. Stabilized by max-subtraction.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, k) = match logits.shape() {
        [n, k] => (*n, *k),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "logits must be [batch, classes], got {other:?}"
            )))
        }
    };
    if labels.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    for &label in labels {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
    }

    let ld = logits.data();
    let mut grad = vec![0.0; batch * k];
    let mut loss = 0.0;
    for i in 0..batch {
        let row = &ld[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss += log_denom - (row[labels[i]] - max);
        for j in 0..k {
            let p = (row[j] - max).exp() / denom;
            grad[i * k + j] = (p - if j == labels[i] { 1.0 } else { 0.0 }) / batch as f64;
        }
    }

    Ok((loss / batch as f64, Tensor::from_data(&[batch, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 4, 10] {
            let logits = Tensor::filled(&[1, k], 0.7).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dominating_logit_drives_loss_to_zero() {
        let mut vals = vec![0.0; 4];
        vals[2] = 50.0;
        let logits = Tensor::from_data(&[1, 4], vals).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits =
            Tensor::from_data(&[2, 3], vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.5]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        for i in 0..2 {
            let s: f64 = (0..3).map(|j| grad.get(&[i, j])).sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::zeros(&[1, 3]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Tensor::from_data(&[1, 2], vec![1000.0, 999.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(grad.data().iter().all(|v| v.is_finite()));
    }
}
