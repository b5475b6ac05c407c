//! Paired embedding batches for the contrastive objectives.

use crate::error::{Error, Result};
use ndarray::Array2;

/// A batch of projected embeddings for `N` samples with two views each.
///
/// Rows are interleaved: row `2i` holds view 1 of sample `i`, row `2i + 1`
/// view 2, so a row's positive partner is always `row ^ 1`.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    rows: Array2<f64>,
}

impl EmbeddingBatch {
    /// Build from a pre-interleaved row matrix. Row count must be even.
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() % 2 != 0 {
            return Err(Error::ShapeMismatch {
                context: "EmbeddingBatch",
                expected: "even row count".into(),
                got: format!("{} rows", rows.nrows()),
            });
        }
        Ok(Self { rows })
    }

    /// Interleave two view matrices (each `N x d`, row-aligned by sample).
    pub fn from_views(view1: &Array2<f64>, view2: &Array2<f64>) -> Result<Self> {
        if view1.dim() != view2.dim() {
            return Err(Error::ShapeMismatch {
                context: "EmbeddingBatch::from_views",
                expected: format!("{:?}", view1.dim()),
                got: format!("{:?}", view2.dim()),
            });
        }
        let (n, d) = view1.dim();
        let mut rows = Array2::zeros((2 * n, d));
        for i in 0..n {
            rows.row_mut(2 * i).assign(&view1.row(i));
            rows.row_mut(2 * i + 1).assign(&view2.row(i));
        }
        Ok(Self { rows })
    }

    /// Positive partner of a row.
    pub fn partner(row: usize) -> usize {
        row ^ 1
    }

    /// Number of samples `N` (half the row count).
    pub fn num_samples(&self) -> usize {
        self.rows.nrows() / 2
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}
