//! 2-D convolution lowered to matrix multiplication (im2col / col2im).
//! Bias-free: every conv here is followed by batch norm.

use crate::error::{Error, Result};
use crate::nn::init::he_normal;
use crate::nn::param::{join, Module, Param, TensorKind};
use ndarray::{Array2, Array4, ArrayViewD, ArrayViewMutD, Ix4};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// (out_channels, in_channels, kh, kw)
    pub weight: Param<Ix4>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in);
        Conv2d {
            weight: Param::new(weight),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim().0
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.weight.value.dim().2;
        if h + 2 * self.padding < k || w + 2 * self.padding < k {
            return Err(Error::ShapeMismatch {
                context: "Conv2d::forward",
                expected: format!("input at least {k}x{k} after padding {}", self.padding),
                got: format!("{h}x{w}"),
            });
        }
        Ok((
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        ))
    }

    /// y[n,f] = sum_c W[f,c] * x[n,c] (cross-correlation). Pure; callers that
    /// need a backward pass keep `x` themselves and hand it back.
    pub fn forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = x.dim();
        let (f, wc, kh, kw) = self.weight.value.dim();
        if c != wc {
            return Err(Error::ShapeMismatch {
                context: "Conv2d::forward",
                expected: format!("{wc} input channels"),
                got: format!("{c}"),
            });
        }
        let (oh, ow) = self.out_hw(h, w)?;
        let cols = im2col(x, kh, kw, self.stride, self.padding, oh, ow);
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((f, wc * kh * kw))
            .expect("weight is standard layout");
        let y2 = w2.dot(&cols); // (f, n*oh*ow)

        let mut y = Array4::zeros((n, f, oh, ow));
        let plane = oh * ow;
        let y2s = y2.as_slice().expect("gemm output is standard layout");
        let ys = y.as_slice_mut().expect("fresh array is standard layout");
        for ni in 0..n {
            for fi in 0..f {
                let src = fi * (n * plane) + ni * plane;
                let dst = (ni * f + fi) * plane;
                ys[dst..dst + plane].copy_from_slice(&y2s[src..src + plane]);
            }
        }
        Ok(y)
    }

    /// Accumulates the weight gradient and returns the input gradient.
    /// `x` must be the tensor the matching forward pass saw.
    pub fn backward(&mut self, x: &Array4<f64>, gy: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = x.dim();
        let (f, _, kh, kw) = self.weight.value.dim();
        let (oh, ow) = self.out_hw(h, w)?;
        if gy.dim() != (n, f, oh, ow) {
            return Err(Error::ShapeMismatch {
                context: "Conv2d::backward",
                expected: format!("{:?}", (n, f, oh, ow)),
                got: format!("{:?}", gy.dim()),
            });
        }

        let plane = oh * ow;
        let mut gy2 = Array2::zeros((f, n * plane));
        {
            let gys = gy.as_standard_layout();
            let gys = gys.as_slice().expect("standard layout");
            let g2s = gy2.as_slice_mut().expect("fresh array");
            for ni in 0..n {
                for fi in 0..f {
                    let src = (ni * f + fi) * plane;
                    let dst = fi * (n * plane) + ni * plane;
                    g2s[dst..dst + plane].copy_from_slice(&gys[src..src + plane]);
                }
            }
        }

        // recompute the lowered input rather than caching it: one extra
        // gather is cheaper than holding (c*k*k) x (n*oh*ow) per layer
        let cols = im2col(x, kh, kw, self.stride, self.padding, oh, ow);
        let dw2 = gy2.dot(&cols.t()); // (f, c*kh*kw)
        {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((f, c * kh * kw))
                .expect("grad is standard layout");
            gw += &dw2;
        }

        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((f, c * kh * kw))
            .expect("weight is standard layout");
        let dcols = w2.t().dot(&gy2); // (c*kh*kw, n*plane)
        Ok(col2im(
            &dcols,
            (n, c, h, w),
            kh,
            kw,
            self.stride,
            self.padding,
            oh,
            ow,
        ))
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        f(
            &join(prefix, "weight"),
            TensorKind::Weight,
            self.weight.value.view().into_dyn(),
        );
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        f(
            &join(prefix, "weight"),
            TensorKind::Weight,
            self.weight.value.view_mut().into_dyn(),
        );
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        let Param { value, grad } = &mut self.weight;
        f(
            &join(prefix, "weight"),
            value.view_mut().into_dyn(),
            grad.view().into_dyn(),
        );
    }

    fn zero_grad(&mut self) {
        self.weight.zero_grad();
    }
}

/// Lower (n,c,h,w) to a (c*kh*kw, n*oh*ow) matrix; out-of-bounds taps are 0.
fn im2col(
    x: &Array4<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * kh * kw, n * oh * ow));
    let x_std = x.as_standard_layout();
    let xs = x_std.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("fresh array");

    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_base = ((ci * kh + ki) * kw + kj) * (n * oh * ow);
                for ni in 0..n {
                    let x_base = (ni * c + ci) * h * w;
                    for i in 0..oh {
                        let ih = (i * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * w;
                        let out_base = row_base + (ni * oh + i) * ow;
                        if stride == 1 {
                            // contiguous run: j + kj - pad stays in [0, w)
                            let lo = pad.saturating_sub(kj);
                            let hi = ow.min((w + pad).saturating_sub(kj));
                            if lo < hi {
                                let src = x_row + lo + kj - pad;
                                cs[out_base + lo..out_base + hi]
                                    .copy_from_slice(&xs[src..src + (hi - lo)]);
                            }
                        } else {
                            for j in 0..ow {
                                let iw = (j * stride + kj) as isize - pad as isize;
                                if iw >= 0 && iw < w as isize {
                                    cs[out_base + j] = xs[x_row + iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-add columns back onto the input grid.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &Array2<f64>,
    xdim: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<f64> {
    let (n, c, h, w) = xdim;
    let mut gx = Array4::zeros((n, c, h, w));
    let ds = dcols.as_slice().expect("gemm output is standard layout");
    let gs = gx.as_slice_mut().expect("fresh array");

    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_base = ((ci * kh + ki) * kw + kj) * (n * oh * ow);
                for ni in 0..n {
                    let x_base = (ni * c + ci) * h * w;
                    for i in 0..oh {
                        let ih = (i * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * w;
                        let out_base = row_base + (ni * oh + i) * ow;
                        for j in 0..ow {
                            let iw = (j * stride + kj) as isize - pad as isize;
                            if iw >= 0 && iw < w as isize {
                                gs[x_row + iw as usize] += ds[out_base + j];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// Scalar-loop reference used to pin the lowered implementation.
    fn naive_conv(
        x: &Array4<f64>,
        weight: &Array4<f64>,
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (f, _, kh, kw) = weight.dim();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut y = Array4::zeros((n, f, oh, ow));
        for ni in 0..n {
            for fi in 0..f {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ih = (i * stride + ki) as isize - pad as isize;
                                    let iw = (j * stride + kj) as isize - pad as isize;
                                    if ih >= 0 && ih < h as isize && iw >= 0 && iw < w as isize {
                                        acc += x[(ni, ci, ih as usize, iw as usize)]
                                            * weight[(fi, ci, ki, kj)];
                                    }
                                }
                            }
                        }
                        y[(ni, fi, i, j)] = acc;
                    }
                }
            }
        }
        y
    }

    fn random_x(rng: &mut rand_chacha::ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn one_by_one_identity_kernel_passes_input_through() {
        let mut rng = rng_from_seed(21);
        let mut conv = Conv2d::new(3, 3, 1, 1, 0, &mut rng);
        conv.weight.value.fill(0.0);
        for i in 0..3 {
            conv.weight.value[(i, i, 0, 0)] = 1.0;
        }
        let x = random_x(&mut rng, (2, 3, 5, 5));
        let y = conv.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_scalar_oracle_across_strides_and_padding() {
        let mut rng = rng_from_seed(22);
        for (k, s, p, h) in [(3, 1, 1, 8), (3, 2, 1, 9), (1, 2, 0, 8), (7, 2, 3, 11)] {
            let conv = Conv2d::new(2, 4, k, s, p, &mut rng);
            let x = random_x(&mut rng, (2, 2, h, h));
            let fast = conv.forward(&x).unwrap();
            let slow = naive_conv(&x, &conv.weight.value, s, p);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn output_shape_follows_floor_rule() {
        let mut rng = rng_from_seed(23);
        let conv = Conv2d::new(3, 64, 7, 2, 3, &mut rng);
        let x = Array4::zeros((1, 3, 224, 224));
        assert_eq!(conv.forward(&x).unwrap().dim(), (1, 64, 112, 112));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut rng = rng_from_seed(24);
        let conv = Conv2d::new(3, 4, 3, 1, 1, &mut rng);
        let x = Array4::zeros((1, 2, 8, 8));
        assert!(matches!(
            conv.forward(&x),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn repeated_forward_is_bit_stable() {
        let mut rng = rng_from_seed(25);
        let conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = random_x(&mut rng, (1, 2, 9, 9));
        let a = conv.forward(&x).unwrap();
        let b = conv.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = rng_from_seed(26);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = random_x(&mut rng, (2, 2, 5, 5));
        let y = conv.forward(&x).unwrap();
        // loss = sum(y^2)/2 so gy = y
        let gx = conv.backward(&x, &y).unwrap();

        let eps = 1e-5;
        let loss = |c: &Conv2d, x: &Array4<f64>| -> f64 {
            c.forward(x).unwrap().iter().map(|v| v * v).sum::<f64>() / 2.0
        };

        for _ in 0..12 {
            let idx = (
                rng.random_range(0..3),
                rng.random_range(0..2),
                rng.random_range(0..3),
                rng.random_range(0..3),
            );
            let mut c2 = conv.clone();
            c2.weight.value[idx] += eps;
            let up = loss(&c2, &x);
            c2.weight.value[idx] -= 2.0 * eps;
            let down = loss(&c2, &x);
            let numeric = (up - down) / (2.0 * eps);
            let analytic = conv.weight.grad[idx];
            assert_abs_diff_eq!(analytic, numeric, epsilon = 1e-6 * numeric.abs().max(1.0));
        }

        for _ in 0..12 {
            let idx = (
                rng.random_range(0..2),
                rng.random_range(0..2),
                rng.random_range(0..5),
                rng.random_range(0..5),
            );
            let mut x2 = x.clone();
            x2[idx] += eps;
            let up = loss(&conv, &x2);
            x2[idx] -= 2.0 * eps;
            let down = loss(&conv, &x2);
            let numeric = (up - down) / (2.0 * eps);
            assert_abs_diff_eq!(gx[idx], numeric, epsilon = 1e-6 * numeric.abs().max(1.0));
        }
    }
}
