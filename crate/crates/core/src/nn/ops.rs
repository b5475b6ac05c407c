//! Stateless activations and pooling.

use crate::error::{Error, Result};
use ndarray::{Array, Array2, Array4, Dimension};

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Backward through ReLU given the *output* of the forward pass: the active
/// set {y > 0} equals {x > 0} except at exact zeros, where the subgradient 0
/// is used.
pub fn relu_backward<D: Dimension>(y: &Array<f64, D>, gy: &Array<f64, D>) -> Array<f64, D> {
    let mut gx = gy.clone();
    gx.zip_mut_with(y, |g, &yv| {
        if yv <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

/// Max pooling; padded positions never win (treated as -inf).
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    /// Flat index into the input for each output cell's winner.
    argmax: Array4<usize>,
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Array4<f64>) -> Result<(Array4<f64>, PoolCache)> {
        let (n, c, h, w) = x.dim();
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::ShapeMismatch {
                context: "MaxPool2d::forward",
                expected: format!("input at least {0}x{0} after padding", self.kernel),
                got: format!("{h}x{w}"),
            });
        }
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        let mut y = Array4::zeros((n, c, oh, ow));
        let mut argmax = Array4::zeros((n, c, oh, ow));

        for ni in 0..n {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ki in 0..self.kernel {
                            for kj in 0..self.kernel {
                                let ih = (i * self.stride + ki) as isize - self.padding as isize;
                                let iw = (j * self.stride + kj) as isize - self.padding as isize;
                                if ih < 0 || ih >= h as isize || iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let v = x[(ni, ci, ih as usize, iw as usize)];
                                if v > best {
                                    best = v;
                                    best_idx =
                                        ((ni * c + ci) * h + ih as usize) * w + iw as usize;
                                }
                            }
                        }
                        y[(ni, ci, i, j)] = best;
                        argmax[(ni, ci, i, j)] = best_idx;
                    }
                }
            }
        }
        Ok((
            y,
            PoolCache {
                argmax,
                in_dim: (n, c, h, w),
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, gy: &Array4<f64>) -> Result<Array4<f64>> {
        if gy.dim() != cache.argmax.dim() {
            return Err(Error::ShapeMismatch {
                context: "MaxPool2d::backward",
                expected: format!("{:?}", cache.argmax.dim()),
                got: format!("{:?}", gy.dim()),
            });
        }
        let mut gx = Array4::zeros(cache.in_dim);
        let gs = gx.as_slice_mut().expect("fresh array");
        for (g, &idx) in gy.iter().zip(cache.argmax.iter()) {
            gs[idx] += g;
        }
        Ok(gx)
    }
}

/// (N, C, H, W) -> (N, C) spatial mean.
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut y = Array2::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let mut sum = 0.0;
            for i in 0..h {
                for j in 0..w {
                    sum += x[(ni, ci, i, j)];
                }
            }
            y[(ni, ci)] = sum * scale;
        }
    }
    y
}

pub fn global_avg_pool_backward(gy: &Array2<f64>, hw: (usize, usize)) -> Array4<f64> {
    let (n, c) = gy.dim();
    let (h, w) = hw;
    let scale = 1.0 / (h * w) as f64;
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let g = gy[(ni, ci)] * scale;
            gx.index_axis_mut(ndarray::Axis(0), ni)
                .index_axis_mut(ndarray::Axis(0), ci)
                .fill(g);
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn relu_clamps_and_routes_gradient() {
        let x = array![[-1.0, 2.0], [0.0, -3.0]];
        let y = relu(&x);
        assert_eq!(y, array![[0.0, 2.0], [0.0, 0.0]]);
        let gy = array![[5.0, 5.0], [5.0, 5.0]];
        assert_eq!(relu_backward(&y, &gy), array![[0.0, 5.0], [0.0, 0.0]]);
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        let x = Array4::from_shape_vec(
            (1, 1, 4, 4),
            vec![
                1.0, 2.0, 5.0, 3.0, //
                4.0, 0.0, 1.0, 2.0, //
                7.0, 1.0, 0.0, 1.0, //
                2.0, 3.0, 4.0, 6.0,
            ],
        )
        .unwrap();
        let pool = MaxPool2d { kernel: 2, stride: 2, padding: 0 };
        let (y, cache) = pool.forward_cached(&x).unwrap();
        assert_eq!(
            y,
            Array4::from_shape_vec((1, 1, 2, 2), vec![4.0, 5.0, 7.0, 6.0]).unwrap()
        );

        let gy = Array4::from_elem((1, 1, 2, 2), 1.0);
        let gx = pool.backward(&cache, &gy).unwrap();
        assert_eq!(gx[(0, 0, 1, 0)], 1.0);
        assert_eq!(gx[(0, 0, 0, 2)], 1.0);
        assert_eq!(gx[(0, 0, 2, 0)], 1.0);
        assert_eq!(gx[(0, 0, 3, 3)], 1.0);
        assert_eq!(gx.sum(), 4.0);
    }

    #[test]
    fn stem_pool_shape_on_padded_input() {
        let pool = MaxPool2d { kernel: 3, stride: 2, padding: 1 };
        let x = Array4::zeros((1, 4, 112, 112));
        assert_eq!(pool.forward(&x).unwrap().dim(), (1, 4, 56, 56));
    }

    #[test]
    fn gap_means_and_spreads_back() {
        let x = Array4::from_shape_vec((1, 2, 1, 2), vec![1.0, 3.0, -2.0, 2.0]).unwrap();
        let y = global_avg_pool(&x);
        assert_abs_diff_eq!(y[(0, 0)], 2.0);
        assert_abs_diff_eq!(y[(0, 1)], 0.0);

        let gy = array![[1.0, -4.0]];
        let gx = global_avg_pool_backward(&gy, (1, 2));
        assert_abs_diff_eq!(gx[(0, 0, 0, 0)], 0.5);
        assert_abs_diff_eq!(gx[(0, 0, 0, 1)], 0.5);
        assert_abs_diff_eq!(gx[(0, 1, 0, 0)], -2.0);
    }
}
