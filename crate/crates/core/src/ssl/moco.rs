//! InfoNCE over in-batch negatives against a momentum branch.

use crate::error::{Error, Result};
use ndarray::Array2;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MocoOutput {
    pub loss: f64,
    /// Gradient w.r.t. the online predictions `q` (momentum keys get none).
    pub grad: Array2<f64>,
}

/// One view direction of the InfoNCE objective: row `i` of `q` has its
/// positive at row `i` of `k` and every other `k` row as a negative.
/// The trainer averages the `(q1, k2)` and `(q2, k1)` directions.
pub fn moco_v3_loss(q: &Array2<f64>, k: &Array2<f64>, tau: f64) -> Result<MocoOutput> {
    if q.dim() != k.dim() {
        return Err(Error::ShapeMismatch {
            context: "moco_v3_loss",
            expected: format!("{:?}", q.dim()),
            got: format!("{:?}", k.dim()),
        });
    }
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let n = q.nrows();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    for (i, row) in q.rows().into_iter().chain(k.rows()).enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::UnnormalizedRows { row: i % n, norm });
        }
    }

    // logits[i][j] = q_i . k_j / tau, cross-entropy against the diagonal
    let logits = q.dot(&k.t()).mapv(|v| v / tau);
    let mut loss = 0.0;
    let mut grad_logits = Array2::<f64>::zeros((n, n));
    let inv_n = 1.0 / n as f64;

    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + denom.ln();
        loss += lse - logits[(i, i)];
        for j in 0..n {
            let p = (logits[(i, j)] - max).exp() / denom;
            let indicator = if i == j { 1.0 } else { 0.0 };
            grad_logits[(i, j)] = (p - indicator) * inv_n;
        }
    }

    let grad = grad_logits.dot(k).mapv(|v| v / tau);
    Ok(MocoOutput {
        loss: loss * inv_n,
        grad,
    })
}
