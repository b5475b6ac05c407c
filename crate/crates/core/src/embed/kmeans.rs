//! Lloyd's algorithm with distance-squared-weighted seeding, plus the
//! adjusted Rand index for comparing a clustering against reference labels.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use std::collections::BTreeMap;

use crate::rng::rng_from_seed;
use crate::{Error, Result};

const MAX_LLOYD_ITERS: usize = 100;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.nrows();
    let dim = points.ncols();
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InvalidConfig(format!(
            "cannot split {n} points into {k} clusters"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("clustering input contains non-finite values".into()));
    }

    // seeding: first centroid uniform, the rest weighted by squared distance
    // to the nearest centroid chosen so far
    let mut rng = rng_from_seed(seed);
    let mut centroids = Array2::<f64>::zeros((k, dim));
    centroids.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> =
        (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let chosen = if total <= 0.0 {
            // every point coincides with a centroid already
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.row_mut(c).assign(&points.row(chosen));
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(points.row(i), centroids.row(c)));
        }
    }

    let mut assignments = vec![0usize; n];
    let mut iterations = 0usize;
    for iter in 0..MAX_LLOYD_ITERS {
        iterations = iter + 1;
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(points.row(i), centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }

        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            for j in 0..dim {
                sums[(assignments[i], j)] += points[(i, j)];
            }
            counts[assignments[i]] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                // revive an empty cluster at the worst-fit point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.row(a), centroids.row(assignments[a]));
                        let db = sq_dist(points.row(b), centroids.row(assignments[b]));
                        da.partial_cmp(&db).expect("finite distances")
                    })
                    .expect("non-empty input");
                centroids.row_mut(c).assign(&points.row(far));
            } else {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..dim {
                    centroids[(c, j)] = sums[(c, j)] * inv;
                }
            }
        }
    }

    let inertia =
        (0..n).map(|i| sq_dist(points.row(i), centroids.row(assignments[i]))).sum();
    Ok(KMeansResult { assignments, centroids, inertia, iterations })
}

/// Chance-corrected agreement between two labelings of the same items, in
/// `[-1, 1]`; invariant to label permutations. When neither labeling splits
/// any pair (the denominator degenerates), identical partitions score 1 and
/// anything else 0.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "adjusted_rand_index",
            expected: format!("{} labels", a.len()),
            got: format!("{}", b.len()),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig("pair counting needs at least 2 samples".into()));
    }

    let mut cells: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }

    let comb2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = cells.values().map(|&v| comb2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| comb2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| comb2(v)).sum();
    let total = comb2(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);

    if (max - expected).abs() < 1e-12 {
        // no pairs to correct for; score by exact partition identity
        let identical = rows.len() == cols.len() && cells.len() == rows.len();
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}
