//! NT-Xent contrastive loss over two-view embedding batches.

use crate::error::{Error, Result};
use crate::ssl::EmbeddingBatch;
use ndarray::{Array1, Array2, ArrayView1};

const NORM_EPS: f64 = 1e-12;
/// Row norms may drift from 1.0 by at most this before the loss rejects them.
const UNIT_TOL: f64 = 1e-6;

/// Normalize one vector to unit length, preserving direction.
pub fn l2_normalize(z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let norm = z.dot(&z).sqrt();
    if norm <= NORM_EPS {
        return Err(Error::ZeroNorm(norm));
    }
    Ok(z.mapv(|v| v / norm))
}

/// Row-wise normalization; also returns the original norms (needed by the
/// backward pass).
pub fn l2_normalize_rows(z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = z.clone();
    let mut norms = Array1::zeros(z.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm <= NORM_EPS {
            return Err(Error::ZeroNorm(norm));
        }
        row.mapv_inplace(|v| v / norm);
        norms[i] = norm;
    }
    Ok((out, norms))
}

/// Chain a gradient w.r.t. normalized rows back to the raw rows.
///
/// For y = z/|z|:  dL/dz = (g - (g . y) y) / |z|.
pub fn l2_normalize_backward(
    grad_normalized: &Array2<f64>,
    normalized: &Array2<f64>,
    norms: &Array1<f64>,
) -> Array2<f64> {
    let mut out = grad_normalized.clone();
    for i in 0..out.nrows() {
        let y = normalized.row(i);
        let g = grad_normalized.row(i);
        let proj = g.dot(&y);
        let norm = norms[i];
        out.row_mut(i)
            .iter_mut()
            .zip(y.iter())
            .for_each(|(o, &yi)| *o = (*o - proj * yi) / norm);
    }
    out
}

/// Temperature-scaled similarity matrix `S = Z Z^T / tau` over unit rows.
pub fn similarity_matrix(z: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    check_unit_rows(z)?;
    let mut s = z.dot(&z.t());
    s.mapv_inplace(|v| v / tau);
    Ok(s)
}

fn check_unit_rows(z: &Array2<f64>) -> Result<()> {
    for (i, row) in z.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::UnnormalizedRows { row: i, norm });
        }
    }
    Ok(())
}

/// Loss value plus everything the trainer needs from one evaluation.
#[derive(Debug, Clone)]
pub struct NtXentOutput {
    pub loss: f64,
    /// One cross-entropy term per row, in batch row order.
    pub per_row: Vec<f64>,
    /// Gradient of the mean loss w.r.t. the (normalized) embedding rows.
    pub grad: Array2<f64>,
}

/// NT-Xent over an interleaved two-view batch of unit-norm rows.
///
/// Each row's positive is its partner view; the denominator runs over every
/// other row in the batch (the positive included, only the anchor itself
/// excluded). With a single sample the denominator holds just the positive
/// term and the loss is exactly zero.
pub fn nt_xent_loss(batch: &EmbeddingBatch, tau: f64) -> Result<NtXentOutput> {
    let z = batch.rows();
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if z.nrows() == 0 {
        return Err(Error::BatchTooSmall(0));
    }
    check_unit_rows(z)?;

    let rows = z.nrows();
    let s = {
        let mut s = z.dot(&z.t());
        s.mapv_inplace(|v| v / tau);
        s
    };

    let mut per_row = Vec::with_capacity(rows);
    // dL/dS, zero on the excluded diagonal
    let mut grad_s = Array2::<f64>::zeros((rows, rows));
    let inv_rows = 1.0 / rows as f64;

    for i in 0..rows {
        let partner = EmbeddingBatch::partner(i);
        // stable log-sum-exp over k != i
        let mut max = f64::NEG_INFINITY;
        for k in 0..rows {
            if k != i {
                max = max.max(s[(i, k)]);
            }
        }
        let mut denom = 0.0;
        for k in 0..rows {
            if k != i {
                denom += (s[(i, k)] - max).exp();
            }
        }
        let lse = max + denom.ln();
        per_row.push(lse - s[(i, partner)]);

        for k in 0..rows {
            if k != i {
                let p = (s[(i, k)] - max).exp() / denom;
                let indicator = if k == partner { 1.0 } else { 0.0 };
                grad_s[(i, k)] = (p - indicator) * inv_rows;
            }
        }
    }

    let loss = per_row.iter().sum::<f64>() * inv_rows;
    // S = Z Z^T / tau  =>  dL/dZ = (G + G^T) Z / tau
    let grad = (&grad_s + &grad_s.t()).dot(z).mapv(|v| v / tau);

    Ok(NtXentOutput { loss, per_row, grad })
}
