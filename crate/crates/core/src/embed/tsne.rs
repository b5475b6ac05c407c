//! Exact t-SNE: Gaussian affinities fit per row by binary search to a target
//! perplexity, Student-t low-dimensional kernel, gradient descent with early
//! exaggeration, momentum switching, and per-coordinate adaptive gains.
//!
//! Quadratic in the number of points — meant for the few-thousand-sample
//! projections this toolkit draws, not for full training corpora.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::rng::rng_from_seed;
use crate::{Error, Result};

const ENTROPY_TOL: f64 = 1e-5;
const BETA_SEARCH_STEPS: usize = 50;
const MIN_PROB: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TsneConfig {
    /// Target perplexity; silently clamped to `(n - 1) / 3` for small inputs.
    pub perplexity: f64,
    pub iters: usize,
    /// `None` derives `max(n / (4 * early_exaggeration), 50)` from the input
    /// size; a fixed rate that suits thousands of points overshoots badly on
    /// hundreds.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch_iter: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iters: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_switch_iter: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity.is_finite() && self.perplexity > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "perplexity must be positive, got {}",
                self.perplexity
            )));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "learning rate must be positive, got {lr}"
                )));
            }
        }
        if !(self.early_exaggeration.is_finite() && self.early_exaggeration >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "early exaggeration must be at least 1, got {}",
                self.early_exaggeration
            )));
        }
        for (name, m) in [
            ("initial_momentum", self.initial_momentum),
            ("final_momentum", self.final_momentum),
        ] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {m}")));
            }
        }
        Ok(())
    }
}

fn pairwise_sq_dists(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let sq: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gram = x.dot(&x.t());
    Array2::from_shape_fn((n, n), |(i, j)| (sq[i] + sq[j] - 2.0 * gram[(i, j)]).max(0.0))
}

/// Symmetrized joint probabilities. Each row's Gaussian bandwidth is found by
/// binary search so the conditional distribution hits `ln(perplexity)` bits
/// of entropy.
fn joint_probabilities(d2: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d2.nrows();
    let target = perplexity.ln();
    let mut cond = Array2::<f64>::zeros((n, n));
    let mut weights = vec![0.0_f64; n];

    for i in 0..n {
        let mut beta = 1.0_f64;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..BETA_SEARCH_STEPS {
            let mut sum = 0.0;
            let mut weighted_d = 0.0;
            for j in 0..n {
                if j != i {
                    let w = (-beta * d2[(i, j)]).exp();
                    weights[j] = w;
                    sum += w;
                    weighted_d += d2[(i, j)] * w;
                }
            }
            let sum = sum.max(1e-300);
            let entropy = sum.ln() + beta * weighted_d / sum;
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                // too flat: tighten the Gaussian
                beta_min = beta;
                beta = if beta_max.is_finite() { 0.5 * (beta + beta_max) } else { beta * 2.0 };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() { 0.5 * (beta + beta_min) } else { beta * 0.5 };
            }
        }
        let sum: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| (-beta * d2[(i, j)]).exp())
            .sum::<f64>()
            .max(1e-300);
        for j in 0..n {
            if j != i {
                cond[(i, j)] = (-beta * d2[(i, j)]).exp() / sum;
            }
        }
    }

    let scale = 1.0 / (2.0 * n as f64);
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            ((cond[(i, j)] + cond[(j, i)]) * scale).max(MIN_PROB)
        }
    })
}

/// Project feature rows to 2-D. Deterministic for a fixed config.
pub fn tsne(features: &Array2<f64>, cfg: &TsneConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = features.nrows();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("projection input contains non-finite values".into()));
    }

    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = joint_probabilities(&pairwise_sq_dists(features), perplexity);
    let learning_rate = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / (4.0 * cfg.early_exaggeration)).max(50.0));

    let mut rng = rng_from_seed(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::from_elem((n, 2), 1.0);
    let mut kernel = Array2::<f64>::zeros((n, n));

    for iter in 0..cfg.iters {
        let exaggeration =
            if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum =
            if iter < cfg.momentum_switch_iter { cfg.initial_momentum } else { cfg.final_momentum };

        // Student-t affinities in the embedding
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d0 = y[(i, 0)] - y[(j, 0)];
                let d1 = y[(i, 1)] - y[(j, 1)];
                let w = 1.0 / (1.0 + d0 * d0 + d1 * d1);
                kernel[(i, j)] = w;
                kernel[(j, i)] = w;
                z += 2.0 * w;
            }
        }
        let z = z.max(MIN_PROB);

        // full gradient from the frozen layout, then one simultaneous update;
        // interleaving the two lets already-moved points skew later gradients
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let mut g0 = 0.0;
            let mut g1 = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = kernel[(i, j)];
                let q = (w / z).max(MIN_PROB);
                let coeff = 4.0 * (exaggeration * p[(i, j)] - q) * w;
                g0 += coeff * (y[(i, 0)] - y[(j, 0)]);
                g1 += coeff * (y[(i, 1)] - y[(j, 1)]);
            }
            grad[(i, 0)] = g0;
            grad[(i, 1)] = g1;
        }
        for i in 0..n {
            for d in 0..2 {
                let g = grad[(i, d)];
                let same_sign = (g > 0.0) == (velocity[(i, d)] > 0.0);
                gains[(i, d)] =
                    if same_sign { (gains[(i, d)] * 0.8).max(0.01) } else { gains[(i, d)] + 0.2 };
                velocity[(i, d)] =
                    momentum * velocity[(i, d)] - learning_rate * gains[(i, d)] * g;
                y[(i, d)] += velocity[(i, d)];
            }
        }

        // keep the embedding centered
        for d in 0..2 {
            let mean = y.column(d).mean().expect("non-empty");
            y.column_mut(d).mapv_inplace(|v| v - mean);
        }
    }

    Ok(y)
}
