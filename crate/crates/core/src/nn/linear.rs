//! Affine layer y = x W^T + b with weight shaped (out, in).

use crate::error::{Error, Result};
use crate::nn::init::he_normal;
use crate::nn::param::{join, Module, Param, TensorKind};
use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Ix1, Ix2};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param<Ix2>,
    pub bias: Param<Ix1>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(he_normal(rng, (out_dim, in_dim), in_dim)),
            bias: Param::new(Array1::zeros(out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.dim().1
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.dim().0
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                context: "Linear::forward",
                expected: format!("{} input features", self.in_dim()),
                got: format!("{}", x.ncols()),
            });
        }
        let mut y = x.dot(&self.weight.value.t());
        for mut row in y.rows_mut() {
            row += &self.bias.value;
        }
        Ok(y)
    }

    /// Accumulates weight/bias gradients; returns the input gradient.
    /// `x` must be the tensor the matching forward pass saw.
    pub fn backward(&mut self, x: &Array2<f64>, gy: &Array2<f64>) -> Result<Array2<f64>> {
        if gy.dim() != (x.nrows(), self.out_dim()) {
            return Err(Error::ShapeMismatch {
                context: "Linear::backward",
                expected: format!("{:?}", (x.nrows(), self.out_dim())),
                got: format!("{:?}", gy.dim()),
            });
        }
        self.weight.grad += &gy.t().dot(x);
        for grow in gy.rows() {
            self.bias.grad += &grow;
        }
        Ok(gy.dot(&self.weight.value))
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        f(&join(prefix, "weight"), TensorKind::Weight, self.weight.value.view().into_dyn());
        f(&join(prefix, "bias"), TensorKind::Weight, self.bias.value.view().into_dyn());
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        f(&join(prefix, "weight"), TensorKind::Weight, self.weight.value.view_mut().into_dyn());
        f(&join(prefix, "bias"), TensorKind::Weight, self.bias.value.view_mut().into_dyn());
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        let Param { value, grad } = &mut self.weight;
        f(&join(prefix, "weight"), value.view_mut().into_dyn(), grad.view().into_dyn());
        let Param { value, grad } = &mut self.bias;
        f(&join(prefix, "bias"), value.view_mut().into_dyn(), grad.view().into_dyn());
    }

    fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }
}
