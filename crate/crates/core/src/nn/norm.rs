//! Per-channel batch normalization over (N, H, W), with running statistics
//! for eval mode. Running variance stores the unbiased estimate; the
//! normalization itself uses the biased batch variance.

use crate::error::{Error, Result};
use crate::nn::param::{join, Module, Param, TensorKind};
use crate::nn::Mode;
use ndarray::{Array1, Array4, ArrayViewD, ArrayViewMutD, Ix1};

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param<Ix1>,
    pub beta: Param<Ix1>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// Weight of the *new* batch statistic in the running update.
    pub momentum: f64,
    pub eps: f64,
}

/// State the backward pass needs from the matching forward call.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Array4<f64>,
    inv_std: Array1<f64>,
    train: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Array1::ones(channels)),
            beta: Param::new(Array1::zeros(channels)),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check_channels(&self, c: usize, context: &'static str) -> Result<()> {
        if c != self.channels() {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{} channels", self.channels()),
                got: format!("{c}"),
            });
        }
        Ok(())
    }

    /// Train mode normalizes by batch statistics and folds them into the
    /// running estimates; eval mode normalizes by the running estimates and
    /// leaves them untouched.
    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Result<(Array4<f64>, BnCache)> {
        let (n, c, h, w) = x.dim();
        self.check_channels(c, "BatchNorm2d::forward")?;
        let cnt = (n * h * w) as f64;

        let (mean, var) = match mode {
            Mode::Train => {
                let (mean, var) = batch_stats(x);
                let unbias = if cnt > 1.0 { cnt / (cnt - 1.0) } else { 1.0 };
                for ci in 0..c {
                    self.running_mean[ci] = (1.0 - self.momentum) * self.running_mean[ci]
                        + self.momentum * mean[ci];
                    self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci]
                        + self.momentum * var[ci] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };

        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x.clone();
        let mut y = Array4::zeros(x.raw_dim());
        for ni in 0..n {
            for ci in 0..c {
                let (m, istd) = (mean[ci], inv_std[ci]);
                let (g, b) = (self.gamma.value[ci], self.beta.value[ci]);
                let mut xh = xhat.index_axis_mut(ndarray::Axis(0), ni);
                let mut xh = xh.index_axis_mut(ndarray::Axis(0), ci);
                let mut yv = y.index_axis_mut(ndarray::Axis(0), ni);
                let mut yv = yv.index_axis_mut(ndarray::Axis(0), ci);
                ndarray::Zip::from(&mut xh).and(&mut yv).for_each(|xh, yv| {
                    *xh = (*xh - m) * istd;
                    *yv = g * *xh + b;
                });
            }
        }

        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                train: matches!(mode, Mode::Train),
            },
        ))
    }

    /// Eval-mode forward without touching any state.
    pub fn forward_inference(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (_, c, _, _) = x.dim();
        self.check_channels(c, "BatchNorm2d::forward_inference")?;
        let mut y = x.clone();
        for ci in 0..c {
            let istd = 1.0 / (self.running_var[ci] + self.eps).sqrt();
            let m = self.running_mean[ci];
            let g = self.gamma.value[ci];
            let b = self.beta.value[ci];
            y.index_axis_mut(ndarray::Axis(1), ci)
                .mapv_inplace(|v| g * (v - m) * istd + b);
        }
        Ok(y)
    }

    /// Accumulates gamma/beta gradients; returns the input gradient. In
    /// train mode the batch statistics are functions of the input, which
    /// adds the two mean-correction terms; in eval mode they are constants.
    pub fn backward(&mut self, cache: &BnCache, gy: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = gy.dim();
        self.check_channels(c, "BatchNorm2d::backward")?;
        if cache.xhat.dim() != gy.dim() {
            return Err(Error::ShapeMismatch {
                context: "BatchNorm2d::backward",
                expected: format!("{:?}", cache.xhat.dim()),
                got: format!("{:?}", gy.dim()),
            });
        }
        let cnt = (n * h * w) as f64;
        let mut gx = Array4::zeros(gy.raw_dim());

        for ci in 0..c {
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for ni in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        let g = gy[(ni, ci, i, j)];
                        sum_gy += g;
                        sum_gy_xhat += g * cache.xhat[(ni, ci, i, j)];
                    }
                }
            }
            self.beta.grad[ci] += sum_gy;
            self.gamma.grad[ci] += sum_gy_xhat;

            let scale = self.gamma.value[ci] * cache.inv_std[ci];
            if cache.train {
                let mean_gy = sum_gy / cnt;
                let mean_gy_xhat = sum_gy_xhat / cnt;
                for ni in 0..n {
                    for i in 0..h {
                        for j in 0..w {
                            let g = gy[(ni, ci, i, j)];
                            let xh = cache.xhat[(ni, ci, i, j)];
                            gx[(ni, ci, i, j)] = scale * (g - mean_gy - xh * mean_gy_xhat);
                        }
                    }
                }
            } else {
                for ni in 0..n {
                    for i in 0..h {
                        for j in 0..w {
                            gx[(ni, ci, i, j)] = scale * gy[(ni, ci, i, j)];
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Per-channel mean and biased variance over (N, H, W).
fn batch_stats(x: &Array4<f64>) -> (Array1<f64>, Array1<f64>) {
    let (n, c, h, w) = x.dim();
    let cnt = (n * h * w) as f64;
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for ci in 0..c {
        let mut sum = 0.0;
        for ni in 0..n {
            for i in 0..h {
                for j in 0..w {
                    sum += x[(ni, ci, i, j)];
                }
            }
        }
        let m = sum / cnt;
        let mut sq = 0.0;
        for ni in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let d = x[(ni, ci, i, j)] - m;
                    sq += d * d;
                }
            }
        }
        mean[ci] = m;
        var[ci] = sq / cnt;
    }
    (mean, var)
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        f(&join(prefix, "gamma"), TensorKind::Weight, self.gamma.value.view().into_dyn());
        f(&join(prefix, "beta"), TensorKind::Weight, self.beta.value.view().into_dyn());
        f(
            &join(prefix, "running_mean"),
            TensorKind::Buffer,
            self.running_mean.view().into_dyn(),
        );
        f(
            &join(prefix, "running_var"),
            TensorKind::Buffer,
            self.running_var.view().into_dyn(),
        );
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        f(&join(prefix, "gamma"), TensorKind::Weight, self.gamma.value.view_mut().into_dyn());
        f(&join(prefix, "beta"), TensorKind::Weight, self.beta.value.view_mut().into_dyn());
        f(
            &join(prefix, "running_mean"),
            TensorKind::Buffer,
            self.running_mean.view_mut().into_dyn(),
        );
        f(
            &join(prefix, "running_var"),
            TensorKind::Buffer,
            self.running_var.view_mut().into_dyn(),
        );
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        let Param { value, grad } = &mut self.gamma;
        f(&join(prefix, "gamma"), value.view_mut().into_dyn(), grad.view().into_dyn());
        let Param { value, grad } = &mut self.beta;
        f(&join(prefix, "beta"), value.view_mut().into_dyn(), grad.view().into_dyn());
    }

    fn zero_grad(&mut self) {
        self.gamma.zero_grad();
        self.beta.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_x(rng: &mut rand_chacha::ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = rng_from_seed(31);
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.value.fill(2.0);
        bn.beta.value.fill(1.0);
        let x = random_x(&mut rng, (4, 2, 3, 3));
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();

        for ci in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..3).flat_map(move |i| (0..3).map(move |j| (n, i, j))))
                .map(|(n, i, j)| y[(n, ci, i, j)])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-10);
            // the layer's eps (1e-5) shaves a hair off the unit variance
            assert_abs_diff_eq!(var.sqrt(), 2.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn running_stats_blend_with_unbiased_variance() {
        let mut bn = BatchNorm2d::new(1);
        // 4 values: mean 2.5, biased var 1.25, unbiased 5/3
        let x = Array4::from_shape_vec((4, 1, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert_abs_diff_eq!(bn.running_mean[0], 0.9 * 0.0 + 0.1 * 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(bn.running_var[0], 0.9 * 1.0 + 0.1 * (5.0 / 3.0), epsilon = 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats_and_never_updates_them() {
        let mut bn = BatchNorm2d::new(1);
        bn.running_mean[0] = 3.0;
        bn.running_var[0] = 4.0;
        bn.beta.value[0] = -1.0;
        let x = Array4::from_elem((2, 1, 2, 2), 3.0);
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        for v in y.iter() {
            assert_abs_diff_eq!(*v, -1.0, epsilon = 1e-12);
        }
        assert_eq!(bn.running_mean[0], 3.0);
        assert_eq!(bn.running_var[0], 4.0);

        let pure = bn.forward_inference(&x).unwrap();
        assert_eq!(pure, y);
    }

    #[test]
    fn gradients_match_central_differences_in_both_modes() {
        for mode in [Mode::Train, Mode::Eval] {
            let mut rng = rng_from_seed(33);
            let mut bn = BatchNorm2d::new(2);
            bn.running_mean[0] = 0.3;
            bn.running_var[1] = 2.0;
            bn.gamma.value[0] = 1.5;
            bn.beta.value[1] = -0.5;
            let x = random_x(&mut rng, (3, 2, 2, 2));

            let loss = |bn: &BatchNorm2d, x: &Array4<f64>| -> f64 {
                let mut bn = bn.clone();
                let (y, _) = bn.forward(x, mode).unwrap();
                y.iter().map(|v| v * v).sum::<f64>() / 2.0
            };

            let (y, cache) = bn.clone().forward(&x, mode).unwrap();
            let gx = bn.backward(&cache, &y).unwrap();

            let eps = 1e-6;
            for _ in 0..10 {
                let idx = (
                    rng.random_range(0..3),
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                );
                let mut x2 = x.clone();
                x2[idx] += eps;
                let up = loss(&bn, &x2);
                x2[idx] -= 2.0 * eps;
                let down = loss(&bn, &x2);
                let numeric = (up - down) / (2.0 * eps);
                assert_abs_diff_eq!(gx[idx], numeric, epsilon = 1e-5 * numeric.abs().max(1.0));
            }

            for ci in 0..2 {
                let mut b2 = bn.clone();
                b2.gamma.value[ci] += eps;
                let up = loss(&b2, &x);
                b2.gamma.value[ci] -= 2.0 * eps;
                let down = loss(&b2, &x);
                let numeric = (up - down) / (2.0 * eps);
                assert_abs_diff_eq!(bn.gamma.grad[ci], numeric, epsilon = 1e-5 * numeric.abs().max(1.0));

                let mut b2 = bn.clone();
                b2.beta.value[ci] += eps;
                let up = loss(&b2, &x);
                b2.beta.value[ci] -= 2.0 * eps;
                let down = loss(&b2, &x);
                let numeric = (up - down) / (2.0 * eps);
                assert_abs_diff_eq!(bn.beta.grad[ci], numeric, epsilon = 1e-5 * numeric.abs().max(1.0));
            }
        }
    }
}
