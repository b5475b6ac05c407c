//! Supervised cross-entropy over probability rows.

use ndarray::Array2;

use crate::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    pub loss: f64,
    /// Gradient of the mean loss w.r.t. the probability entries.
    pub grad: Array2<f64>,
    /// How many true-class probabilities hit the numerical clamp.
    pub clamped: usize,
}

/// Mean of −log p[true class] over the batch. Probabilities below
/// [`PROB_CLAMP`] are clamped (with a warning) instead of producing ±inf;
/// clamped entries get zero gradient, matching the flat clamp region.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> Result<CrossEntropyOutput> {
    let (n, k) = probs.dim();
    if n == 0 {
        return Err(Error::InvalidConfig("cross_entropy needs at least one row".into()));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy",
            expected: format!("{n} labels"),
            got: format!("{}", labels.len()),
        });
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, k));
    let mut clamped = 0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::ShapeMismatch {
                context: "cross_entropy",
                expected: format!("labels < {k}"),
                got: format!("label {label} at row {i}"),
            });
        }
        let p = probs[(i, label)];
        if p < PROB_CLAMP {
            clamped += 1;
            loss += -PROB_CLAMP.ln();
            // flat region of the clamp: no gradient
        } else {
            loss += -p.ln();
            grad[(i, label)] = -1.0 / (n as f64 * p);
        }
    }
    if clamped > 0 {
        log::warn!("cross_entropy clamped {clamped}/{n} true-class probabilities below {PROB_CLAMP:e}");
    }
    Ok(CrossEntropyOutput { loss: loss / n as f64, grad, clamped })
}

/// Backward through a row softmax: given ∂L/∂p where p = softmax(z),
/// returns ∂L/∂z = p ⊙ (g − ⟨g, p⟩).
pub fn softmax_backward(probs: &Array2<f64>, gprobs: &Array2<f64>) -> Array2<f64> {
    let mut gz = Array2::zeros(probs.raw_dim());
    for ((mut gz_row, p_row), g_row) in
        gz.rows_mut().into_iter().zip(probs.rows()).zip(gprobs.rows())
    {
        let dot: f64 = g_row.iter().zip(p_row.iter()).map(|(g, p)| g * p).sum();
        for ((gz, &p), &g) in gz_row.iter_mut().zip(p_row.iter()).zip(g_row.iter()) {
            *gz = p * (g - dot);
        }
    }
    gz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::heads::softmax;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn uniform_probabilities_give_ln_k() {
        let probs = Array2::from_elem((3, 4), 0.25);
        let out = cross_entropy(&probs, &[0, 1, 3]).unwrap();
        assert!((out.loss - 4.0f64.ln()).abs() < 1e-12);
        assert_eq!(out.clamped, 0);
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let probs = array![[1.0, 0.0], [0.0, 1.0]];
        let out = cross_entropy(&probs, &[0, 1]).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn zero_probability_is_clamped_with_finite_loss() {
        let probs = array![[0.0, 1.0]];
        let out = cross_entropy(&probs, &[0]).unwrap();
        assert!(out.loss.is_finite());
        assert_eq!(out.clamped, 1);
        assert!((out.loss - (-PROB_CLAMP.ln())).abs() < 1e-9);
        // clamped entry carries no gradient
        assert_eq!(out.grad[(0, 0)], 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::rng::rng_from_seed(11);
        let logits = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let probs = softmax(&logits);
        let labels = [0, 2, 4, 1];
        let out = cross_entropy(&probs, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..4 {
            for j in 0..5 {
                let mut plus = probs.clone();
                plus[(i, j)] += eps;
                let mut minus = probs.clone();
                minus[(i, j)] -= eps;
                let numeric = (cross_entropy(&plus, &labels).unwrap().loss
                    - cross_entropy(&minus, &labels).unwrap().loss)
                    / (2.0 * eps);
                let analytic = out.grad[(i, j)];
                assert!(
                    (numeric - analytic).abs() < 1e-4 * numeric.abs().max(1.0),
                    "({i},{j}): {numeric} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn softmax_chain_reduces_to_probs_minus_onehot() {
        let mut rng = crate::rng::rng_from_seed(5);
        let logits = Array2::from_shape_fn((6, 3), |_| rng.random_range(-2.0..2.0));
        let probs = softmax(&logits);
        let labels = [2, 0, 1, 1, 2, 0];
        let ce = cross_entropy(&probs, &labels).unwrap();
        let gz = softmax_backward(&probs, &ce.grad);
        let n = 6.0;
        for i in 0..6 {
            for j in 0..3 {
                let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                let expected = (probs[(i, j)] - onehot) / n;
                assert!(
                    (gz[(i, j)] - expected).abs() < 1e-12,
                    "({i},{j}): {} vs {expected}",
                    gz[(i, j)]
                );
            }
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let probs = Array2::from_elem((2, 3), 1.0 / 3.0);
        assert!(cross_entropy(&probs, &[0, 3]).is_err());
        assert!(cross_entropy(&probs, &[0]).is_err());
    }
}
