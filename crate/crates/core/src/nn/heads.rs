//! Heads attached to pooled encoder features: a two-layer MLP used for
//! projection (and, mirrored, for prediction) and a softmax classifier.

use crate::error::Result;
use crate::nn::linear::Linear;
use crate::nn::ops::{relu, relu_backward};
use crate::nn::param::{join, Module, TensorKind};
use ndarray::{Array2, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;

pub const PROJECTION_HIDDEN: usize = 512;
pub const PROJECTION_DIM: usize = 128;

/// affine -> ReLU -> affine, no trailing nonlinearity.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
}

impl MlpHead {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        MlpHead {
            fc1: Linear::new(in_dim, hidden, rng),
            fc2: Linear::new(hidden, out_dim, rng),
        }
    }

    /// Projection from encoder features to the embedding space.
    pub fn projection(feature_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(feature_dim, PROJECTION_HIDDEN, PROJECTION_DIM, rng)
    }

    /// Predictor on top of projections (online branch only); same widths,
    /// so input dim = projection output dim.
    pub fn prediction(rng: &mut ChaCha8Rng) -> Self {
        Self::new(PROJECTION_DIM, PROJECTION_HIDDEN, PROJECTION_DIM, rng)
    }

    pub fn in_dim(&self) -> usize {
        self.fc1.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.fc2.out_dim()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.fc2.forward(&relu(&self.fc1.forward(x)?))
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        let hidden = relu(&self.fc1.forward(x)?);
        let y = self.fc2.forward(&hidden)?;
        Ok((
            y,
            MlpCache {
                input: x.clone(),
                hidden,
            },
        ))
    }

    pub fn backward(&mut self, cache: &MlpCache, gy: &Array2<f64>) -> Result<Array2<f64>> {
        let g = self.fc2.backward(&cache.hidden, gy)?;
        let g = relu_backward(&cache.hidden, &g);
        self.fc1.backward(&cache.input, &g)
    }
}

impl Module for MlpHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        self.fc1.visit_trainable(&join(prefix, "fc1"), f);
        self.fc2.visit_trainable(&join(prefix, "fc2"), f);
    }

    fn zero_grad(&mut self) {
        self.fc1.zero_grad();
        self.fc2.zero_grad();
    }
}

/// Row-wise softmax; numerically shifted by the row max.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    probs
}

/// Affine map to class logits; `classify` appends the softmax.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub fc: Linear,
}

impl ClassifierHead {
    pub fn new(feature_dim: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        ClassifierHead {
            fc: Linear::new(feature_dim, num_classes, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.fc.out_dim()
    }

    pub fn forward(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        self.fc.forward(h)
    }

    /// Class probabilities; rows sum to 1.
    pub fn classify(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax(&self.fc.forward(h)?))
    }

    pub fn backward(&mut self, h: &Array2<f64>, glogits: &Array2<f64>) -> Result<Array2<f64>> {
        self.fc.backward(h, glogits)
    }
}

impl Module for ClassifierHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, ArrayViewD<'_, f64>)) {
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, TensorKind, ArrayViewMutD<'_, f64>),
    ) {
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }

    fn visit_trainable(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>, ArrayViewD<'_, f64>),
    ) {
        self.fc.visit_trainable(&join(prefix, "fc"), f);
    }

    fn zero_grad(&mut self) {
        self.fc.zero_grad();
    }
}
