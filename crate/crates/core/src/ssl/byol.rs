//! Negative-cosine regression onto a momentum target.

use crate::error::{Error, Result};
use ndarray::Array2;

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ByolOutput {
    pub loss: f64,
    /// Gradient w.r.t. the online predictions `p` (targets carry no gradient).
    pub grad: Array2<f64>,
}

/// Mean over row-aligned pairs of `2 - 2 cos(p_r, z_r)`, in `[0, 4]`.
///
/// Callers stack both view directions into the rows, so the mean is already
/// the symmetrized loss.
pub fn byol_loss(p_online: &Array2<f64>, z_target: &Array2<f64>) -> Result<ByolOutput> {
    if p_online.dim() != z_target.dim() {
        return Err(Error::ShapeMismatch {
            context: "byol_loss",
            expected: format!("{:?}", p_online.dim()),
            got: format!("{:?}", z_target.dim()),
        });
    }
    let rows = p_online.nrows();
    if rows == 0 {
        return Err(Error::BatchTooSmall(0));
    }

    let mut loss = 0.0;
    let mut grad = Array2::zeros(p_online.raw_dim());
    let inv_rows = 1.0 / rows as f64;

    for i in 0..rows {
        let p = p_online.row(i);
        let z = z_target.row(i);
        let pn = p.dot(&p).sqrt();
        let zn = z.dot(&z).sqrt();
        if pn <= NORM_EPS || zn <= NORM_EPS {
            return Err(Error::ZeroNorm(pn.min(zn)));
        }
        let cos = p.dot(&z) / (pn * zn);
        loss += 2.0 - 2.0 * cos;

        // d(-2 cos)/dp = -2 (z_hat - cos * p_hat) / |p|
        let mut g = grad.row_mut(i);
        for j in 0..p.len() {
            let p_hat = p[j] / pn;
            let z_hat = z[j] / zn;
            g[j] = -2.0 * (z_hat - cos * p_hat) / pn * inv_rows;
        }
    }

    Ok(ByolOutput {
        loss: loss * inv_rows,
        grad,
    })
}
