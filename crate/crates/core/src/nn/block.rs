//! Bottleneck residual block: 1x1 reduce -> 3x3 (carries the stride) ->
//! 1x1 expand, each followed by batch norm, ReLU after the skip addition.

use crate::error::{Error, Result};
use crate::nn::conv::Conv2d;
use crate::nn::norm::{BatchNorm2d, BnCache};
use crate::nn::ops::{relu, relu_backward};
use crate::nn::param::{join, Module, TensorKind};
use crate::nn::Mode;
use ndarray::{Array4, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ResidualBlockSpec {
    pub in_channels: usize,
    pub bottleneck_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ResidualBlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.bottleneck_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(
                "residual block channel counts must be positive".into(),
            ));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "residual block stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        Ok(())
    }

    /// The skip path is the identity exactly when shapes already agree.
    pub fn identity_skip(&self) -> bool {
        self.in_channels == self.out_channels && self.stride == 1
    }
}

#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub spec: ResidualBlockSpec,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

#[derive(Debug, Clone)]
pub struct BottleneckCache {
    input: Array4<f64>,
    r1: Array4<f64>,
    r2: Array4<f64>,
    bn1c: BnCache,
    bn2c: BnCache,
    bn3c: BnCache,
    scc: Option<BnCache>,
    y: Array4<f64>,
}

impl Bottleneck {
    pub fn new(spec: ResidualBlockSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let (inc, mid, out) = (spec.in_channels, spec.bottleneck_channels, spec.out_channels);
        let shortcut = if spec.identity_skip() {
            None
        } else {
            Some((
                Conv2d::new(inc, out, 1, spec.stride, 0, rng),
                BatchNorm2d::new(out),
            ))
        };
        Ok(Bottleneck {
            spec,
            conv1: Conv2d::new(inc, mid, 1, 1, 0, rng),
            bn1: BatchNorm2d::new(mid),
            conv2: Conv2d::new(mid, mid, 3, spec.stride, 1, rng),
            bn2: BatchNorm2d::new(mid),
            conv3: Conv2d::new(mid, out, 1, 1, 0, rng),
            bn3: BatchNorm2d::new(out),
            shortcut,
        })
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Result<(Array4<f64>, BottleneckCache)> {
        let a = self.conv1.forward(x)?;
        let (a, bn1c) = self.bn1.forward(&a, mode)?;
        let r1 = relu(&a);
        let b = self.conv2.forward(&r1)?;
        let (b, bn2c) = self.bn2.forward(&b, mode)?;
        let r2 = relu(&b);
        let c = self.conv3.forward(&r2)?;
        let (mut c, bn3c) = self.bn3.forward(&c, mode)?;

        let scc = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x)?;
                let (s, scc) = bn.forward(&s, mode)?;
                c += &s;
                Some(scc)
            }
            None => {
                c += x;
                None
            }
        };
        let y = relu(&c);
        Ok((
            y.clone(),
            BottleneckCache {
                input: x.clone(),
                r1,
                r2,
                bn1c,
                bn2c,
                bn3c,
                scc,
                y,
            },
        ))
    }

    pub fn forward_inference(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let a = self.bn1.forward_inference(&self.conv1.forward(x)?)?;
        let b = self
            .bn2
            .forward_inference(&self.conv2.forward(&relu(&a))?)?;
        let mut c = self
            .bn3
            .forward_inference(&self.conv3.forward(&relu(&b))?)?;
        match &self.shortcut {
            Some((conv, bn)) => c += &bn.forward_inference(&conv.forward(x)?)?,
            None => c += x,
        }
        Ok(relu(&c))
    }

    pub fn backward(&mut self, cache: &BottleneckCache, gy: &Array4<f64>) -> Result<Array4<f64>> {
        let gsum = relu_backward(&cache.y, gy);

        let g = self.bn3.backward(&cache.bn3c, &gsum)?;
        let g = self.conv3.backward(&cache.r2, &g)?;
        let g = relu_backward(&cache.r2, &g);
        let g = self.bn2.backward(&cache.bn2c, &g)?;
        let g = self.conv2.backward(&cache.r1, &g)?;
        let g = relu_backward(&cache.r1, &g);
        let g = self.bn1.backward(&cache.bn1c, &g)?;
        let g_main = self.conv1.backward(&cache.input, &g)?;

        let g_skip = match (&mut self.shortcut, &cache.scc) {
            (Some((conv, bn)), Some(scc)) => {
                let g = bn.backward(scc, &gsum)?;
                conv.backward(&cache.input, &g)?
            }
            (None, None) => gsum,
            _ => {
                return Err(Error::ShapeMismatch {
                    context: "Bottleneck::backward",
                    expected: "cache from this block's forward".into(),
                    got: "shortcut cache mismatch".into(),
                })
            }
        };
        Ok(g_main + &g_skip)
    }
}

impl Module for Bottleneck {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn3.visit(&join(prefix, "bn3"), f);
        if let Some((conv, bn)) = &self.shortcut {
            conv.visit(&join(prefix, "downsample.conv"), f);
            bn.visit(&join(prefix, "downsample.bn"), f);
        }
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.bn3.visit_mut(&join(prefix, "bn3"), f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_mut(&join(prefix, "downsample.conv"), f);
            bn.visit_mut(&join(prefix, "downsample.bn"), f);
        }
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        self.conv1.visit_trainable(&join(prefix, "conv1"), f);
        self.bn1.visit_trainable(&join(prefix, "bn1"), f);
        self.conv2.visit_trainable(&join(prefix, "conv2"), f);
        self.bn2.visit_trainable(&join(prefix, "bn2"), f);
        self.conv3.visit_trainable(&join(prefix, "conv3"), f);
        self.bn3.visit_trainable(&join(prefix, "bn3"), f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_trainable(&join(prefix, "downsample.conv"), f);
            bn.visit_trainable(&join(prefix, "downsample.bn"), f);
        }
    }

    fn zero_grad(&mut self) {
        self.conv1.zero_grad();
        self.bn1.zero_grad();
        self.conv2.zero_grad();
        self.bn2.zero_grad();
        self.conv3.zero_grad();
        self.bn3.zero_grad();
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.zero_grad();
            bn.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::named_tensors;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn spec(inc: usize, mid: usize, out: usize, stride: usize) -> ResidualBlockSpec {
        ResidualBlockSpec {
            in_channels: inc,
            bottleneck_channels: mid,
            out_channels: out,
            stride,
        }
    }

    fn random_x(rng: &mut rand_chacha::ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_residual_weights_reduce_to_relu_of_input() {
        let mut rng = rng_from_seed(51);
        let mut block = Bottleneck::new(spec(4, 2, 4, 1), &mut rng).unwrap();
        block.conv1.weight.value.fill(0.0);
        block.conv2.weight.value.fill(0.0);
        block.conv3.weight.value.fill(0.0);
        let mut x = random_x(&mut rng, (2, 4, 5, 5));
        x[(0, 0, 0, 0)] = -1.0;
        x[(0, 0, 0, 1)] = 2.0;
        let y = block.forward_inference(&x).unwrap();
        assert_eq!(y, relu(&x));
        assert_eq!(y[(0, 0, 0, 0)], 0.0);
        assert_eq!(y[(0, 0, 0, 1)], 2.0);
    }

    #[test]
    fn projected_shortcut_appears_exactly_when_shapes_change() {
        let mut rng = rng_from_seed(52);
        let identity = Bottleneck::new(spec(8, 4, 8, 1), &mut rng).unwrap();
        assert!(!named_tensors(&identity).keys().any(|k| k.contains("downsample")));

        let widened = Bottleneck::new(spec(8, 4, 16, 1), &mut rng).unwrap();
        assert!(named_tensors(&widened).keys().any(|k| k.contains("downsample")));

        let strided = Bottleneck::new(spec(8, 4, 8, 2), &mut rng).unwrap();
        assert!(named_tensors(&strided).keys().any(|k| k.contains("downsample")));
    }

    #[test]
    fn stride_two_halves_spatial_dims() {
        let mut rng = rng_from_seed(53);
        let mut block = Bottleneck::new(spec(4, 2, 8, 2), &mut rng).unwrap();
        let x = random_x(&mut rng, (1, 4, 8, 8));
        let (y, _) = block.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.dim(), (1, 8, 4, 4));
    }

    #[test]
    fn matches_manual_composition_of_layers() {
        let mut rng = rng_from_seed(54);
        let block = Bottleneck::new(spec(3, 2, 5, 2), &mut rng).unwrap();
        let x = random_x(&mut rng, (2, 3, 6, 6));

        let a = block.bn1.forward_inference(&block.conv1.forward(&x).unwrap()).unwrap();
        let b = block
            .bn2
            .forward_inference(&block.conv2.forward(&relu(&a)).unwrap())
            .unwrap();
        let mut c = block
            .bn3
            .forward_inference(&block.conv3.forward(&relu(&b)).unwrap())
            .unwrap();
        let (sc_conv, sc_bn) = block.shortcut.as_ref().unwrap();
        c += &sc_bn
            .forward_inference(&sc_conv.forward(&x).unwrap())
            .unwrap();
        let expected = relu(&c);

        let y = block.forward_inference(&x).unwrap();
        for (a, b) in y.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut rng = rng_from_seed(55);
        let mut block = Bottleneck::new(spec(4, 2, 4, 1), &mut rng).unwrap();
        let x = Array4::zeros((1, 3, 5, 5));
        assert!(block.forward(&x, Mode::Train).is_err());
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(spec(0, 2, 4, 1).validate().is_err());
        assert!(spec(4, 2, 4, 3).validate().is_err());
        assert!(spec(4, 2, 8, 2).validate().is_ok());
    }

    #[test]
    fn block_gradients_match_central_differences() {
        let mut rng = rng_from_seed(56);
        let mut block = Bottleneck::new(spec(2, 2, 3, 2), &mut rng).unwrap();
        let x = random_x(&mut rng, (2, 2, 4, 4));

        let loss = |b: &Bottleneck, x: &Array4<f64>| -> f64 {
            let mut b = b.clone();
            let (y, _) = b.forward(x, Mode::Train).unwrap();
            y.iter().map(|v| v * v).sum::<f64>() / 2.0
        };

        let (y, cache) = block.clone().forward(&x, Mode::Train).unwrap();
        let gx = block.backward(&cache, &y).unwrap();

        let eps = 1e-5;
        for _ in 0..8 {
            let idx = (
                rng.random_range(0..2),
                rng.random_range(0..2),
                rng.random_range(0..4),
                rng.random_range(0..4),
            );
            let mut x2 = x.clone();
            x2[idx] += eps;
            let up = loss(&block, &x2);
            x2[idx] -= 2.0 * eps;
            let down = loss(&block, &x2);
            let numeric = (up - down) / (2.0 * eps);
            assert_abs_diff_eq!(gx[idx], numeric, epsilon = 1e-4 * numeric.abs().max(1.0));
        }

        // one conv weight and one bn weight through the whole block
        let widx = (0, 0, 1, 1);
        let mut b2 = block.clone();
        b2.conv2.weight.value[widx] += eps;
        let up = loss(&b2, &x);
        b2.conv2.weight.value[widx] -= 2.0 * eps;
        let down = loss(&b2, &x);
        let numeric = (up - down) / (2.0 * eps);
        assert_abs_diff_eq!(block.conv2.weight.grad[widx], numeric, epsilon = 1e-4 * numeric.abs().max(1.0));

        let mut b2 = block.clone();
        b2.bn2.gamma.value[1] += eps;
        let up = loss(&b2, &x);
        b2.bn2.gamma.value[1] -= 2.0 * eps;
        let down = loss(&b2, &x);
        let numeric = (up - down) / (2.0 * eps);
        assert_abs_diff_eq!(block.bn2.gamma.grad[1], numeric, epsilon = 1e-4 * numeric.abs().max(1.0));
    }
}
