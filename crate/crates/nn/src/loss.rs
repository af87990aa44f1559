//! Softmax cross-entropy and accuracy helpers.

use ndarray::Array2;

/// Classification targets: integer labels or soft label distributions
/// (one row per sample, as produced by label mixing).
pub enum Targets<'a> {
    Hard(&'a [usize]),
    Soft(&'a Array2<f64>),
}

/// Mean softmax cross-entropy over the batch, plus the gradient with respect
/// to the logits. The softmax is computed with per-row max subtraction.
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: Targets) -> (f64, Array2<f64>) {
    let (n, k) = logits.dim();
    assert!(n > 0, "empty batch");
    let mut probs = Array2::zeros((n, k));
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..k {
            let e = (row[j] - max).exp();
            probs[[i, j]] = e;
            z += e;
        }
        for j in 0..k {
            probs[[i, j]] /= z;
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    match targets {
        Targets::Hard(labels) => {
            assert_eq!(labels.len(), n, "label count mismatch");
            for (i, &y) in labels.iter().enumerate() {
                assert!(y < k, "label out of range");
                loss -= probs[[i, y]].max(f64::MIN_POSITIVE).ln();
                grad[[i, y]] -= 1.0;
            }
        }
        Targets::Soft(t) => {
            assert_eq!(t.dim(), (n, k), "soft target shape mismatch");
            for i in 0..n {
                for j in 0..k {
                    if t[[i, j]] != 0.0 {
                        loss -= t[[i, j]] * probs[[i, j]].max(f64::MIN_POSITIVE).ln();
                    }
                    grad[[i, j]] -= t[[i, j]];
                }
            }
        }
    }
    (loss * inv_n, grad * inv_n)
}

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    assert_eq!(logits.dim().0, labels.len(), "label count mismatch");
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .outer_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax_row(row.as_slice().expect("contiguous row")) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// One-hot encode integer labels into an `(n, num_classes)` matrix.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        assert!(y < num_classes, "label out of range");
        out[[i, y]] = 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_k_loss() {
        let logits = Array2::zeros((2, 4));
        let (loss, grad) = softmax_cross_entropy(&logits, Targets::Hard(&[0, 3]));
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
        // grad = (p - onehot)/n with p = 1/4
        assert!((grad[[0, 0]] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!((grad[[0, 1]] - 0.25 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn soft_targets_match_hard_when_one_hot() {
        let logits = array![[2.0, -1.0, 0.5]];
        let (l_hard, g_hard) = softmax_cross_entropy(&logits, Targets::Hard(&[2]));
        let t = one_hot(&[2], 3);
        let (l_soft, g_soft) = softmax_cross_entropy(&logits, Targets::Soft(&t));
        assert!((l_hard - l_soft).abs() < 1e-12);
        for (a, b) in g_hard.iter().zip(g_soft.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = array![[0.3, -0.7, 1.2], [0.0, 0.1, -0.2]];
        let labels = [2usize, 1];
        let (_, grad) = softmax_cross_entropy(&logits, Targets::Hard(&labels));
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut lp = logits.clone();
                lp[[i, j]] += h;
                let mut lm = logits.clone();
                lm[[i, j]] -= h;
                let (fp, _) = softmax_cross_entropy(&lp, Targets::Hard(&labels));
                let (fm, _) = softmax_cross_entropy(&lm, Targets::Hard(&labels));
                let numeric = (fp - fm) / (2.0 * h);
                assert!((grad[[i, j]] - numeric).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn argmax_ties_resolve_to_first() {
        assert_eq!(argmax_row(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax_row(&[0.1, 0.9, 0.9]), 1);
    }

    #[test]
    fn accuracy_counts_matches() {
        let logits = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert!((accuracy(&logits, &[0, 1, 1]) - 2.0 / 3.0).abs() < 1e-12);
    }
}
