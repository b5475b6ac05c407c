//! Pixel normalization into encoder input tensors.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::augment::Pixels;
use crate::{Error, Result};

/// Per-channel standardization constants applied after scaling to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeSpec {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormalizeSpec {
    fn default() -> Self {
        Self { mean: 0.5, std: 0.5 }
    }
}

impl NormalizeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.std <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "normalization std must be positive, got {}",
                self.std
            )));
        }
        Ok(())
    }
}

/// Standardize a grayscale image and replicate it to the three channels the
/// encoder stem expects: out[c] = (x − mean) / std for every channel c.
pub fn to_model_input(img: &Pixels, spec: &NormalizeSpec) -> Array3<f64> {
    let (h, w) = img.dim();
    let normalized = img.mapv(|v| (v - spec.mean) / spec.std);
    let mut out = Array3::zeros((3, h, w));
    for c in 0..3 {
        out.index_axis_mut(ndarray::Axis(0), c).assign(&normalized);
    }
    out
}
