//! Losses: mean squared error and sparse softmax cross-entropy.

use crate::error::{Error, Result};
use crate::nn::matrix::DenseMatrix;

/// Mean over all elements of `(pred - target)^2`, plus the gradient
/// `2 (pred - target) / element_count`. The loss value accumulates in f64.
pub fn mse_loss(prediction: &DenseMatrix, target: &DenseMatrix) -> Result<(f32, DenseMatrix)> {
    if prediction.rows() != target.rows() || prediction.cols() != target.cols() {
        return Err(Error::dimension(
            "mse_loss",
            format!("{}x{}", target.rows(), target.cols()),
            format!("{}x{}", prediction.rows(), prediction.cols()),
        ));
    }
    let count = (prediction.rows() * prediction.cols()) as f64;
    let mut acc = 0.0f64;
    let mut grad = DenseMatrix::zeros(prediction.rows(), prediction.cols());
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(prediction.data())
        .zip(target.data())
    {
        let diff = p - t;
        acc += f64::from(diff) * f64::from(diff);
        *g = 2.0 * diff / count as f32;
    }
    Ok(((acc / count) as f32, grad))
}

/// Row-wise softmax with max subtraction. Rows sum to 1.
pub fn softmax(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
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

/// Sparse categorical cross-entropy.
///
/// The per-row loss is computed as `lse(x) - x[label]` with
/// `lse(x) = max + ln(1 + sum_{i != argmax} exp(x_i - max))`, which keeps
/// tiny losses (confident correct predictions) accurate.
pub fn softmax_cross_entropy(
    logits: &DenseMatrix,
    class_labels: &[usize],
) -> Result<(f32, DenseMatrix)> {
    if class_labels.len() != logits.rows() {
        return Err(Error::dimension(
            "softmax_cross_entropy",
            logits.rows(),
            class_labels.len(),
        ));
    }
    let classes = logits.cols();
    for &label in class_labels {
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
    }
    let batch = logits.rows() as f64;
    let mut acc = 0.0f64;
    let mut grad = softmax(logits);
    for (r, &label) in class_labels.iter().enumerate() {
        let row = logits.row(r);
        let (max_idx, &max) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .expect("non-empty row");
        let mut rest = 0.0f64;
        for (i, &v) in row.iter().enumerate() {
            if i != max_idx {
                rest += f64::from(v - max).exp();
            }
        }
        let lse = f64::from(max) + rest.ln_1p();
        acc += lse - f64::from(row[label]);

        let grow = grad.row_mut(r);
        grow[label] -= 1.0;
        for v in grow.iter_mut() {
            *v /= batch as f32;
        }
    }
    Ok(((acc / batch) as f32, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_when_equal() {
        let a = DenseMatrix::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let (loss, grad) = mse_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_hand_values() {
        let p = DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let t = DenseMatrix::zeros(1, 2);
        let (loss, _) = mse_loss(&p, &t).unwrap();
        assert_eq!(loss, 1.0);

        let p = DenseMatrix::from_rows(&[vec![3.0]]).unwrap();
        let t = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.data(), &[4.0]);
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        for c in [2usize, 5, 60] {
            let logits = DenseMatrix::zeros(1, c);
            let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
            assert!((f64::from(loss) - (c as f64).ln()).abs() < 1e-6, "c={c}");
        }
    }

    #[test]
    fn confident_correct_prediction_tiny_loss() {
        // loss = ln(1 + e^-20) ~= 2.061e-9
        let logits = DenseMatrix::from_rows(&[vec![10.0, -10.0]]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        let expected = (-20.0f64).exp().ln_1p();
        assert!((f64::from(loss) - expected).abs() < 1e-12 * (1.0 + expected));
    }

    #[test]
    fn grad_rows_sum_to_zero() {
        let logits = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.3], vec![0.0, 0.0, 4.0]]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        for r in 0..grad.rows() {
            let sum: f32 = grad.row(r).iter().sum();
            assert!(sum.abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = DenseMatrix::from_rows(&[vec![3.0, -1.0, 0.0], vec![-5.0, 5.0, 0.5]]).unwrap();
        let s = softmax(&logits);
        for r in 0..s.rows() {
            let sum: f32 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn label_out_of_range_errors() {
        let logits = DenseMatrix::zeros(1, 3);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}
