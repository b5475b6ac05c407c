//! Class-activation maps over the encoder's final convolutional stage, plus
//! rendering: Grad-CAM (pooled gradients), Grad-CAM++ (closed-form pixelwise
//! weights), Eigen-CAM (dominant singular component, gradient-free), and a
//! bilinear-upsampled colormap overlay.

pub mod cam;
pub mod overlay;

pub use cam::{capture_from_classifier, eigen_cam, grad_cam, grad_cam_pp, GRAD_CAM_PP_EPS};
pub use overlay::{bilinear_upsample, overlay, OVERLAY_ALPHA};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CamMethod {
    #[serde(rename = "grad-cam")]
    GradCam,
    #[serde(rename = "grad-cam++")]
    GradCamPp,
    #[serde(rename = "eigen-cam")]
    EigenCam,
}

impl CamMethod {
    pub const ALL: [CamMethod; 3] = [CamMethod::GradCam, CamMethod::GradCamPp, CamMethod::EigenCam];

    pub fn as_str(self) -> &'static str {
        match self {
            CamMethod::GradCam => "grad-cam",
            CamMethod::GradCamPp => "grad-cam++",
            CamMethod::EigenCam => "eigen-cam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grad-cam" | "gradcam" => Ok(CamMethod::GradCam),
            "grad-cam++" | "gradcam++" | "grad-cam-pp" => Ok(CamMethod::GradCamPp),
            "eigen-cam" | "eigencam" => Ok(CamMethod::EigenCam),
            other => Err(Error::InvalidConfig(format!("unknown CAM method `{other}`"))),
        }
    }
}

impl std::fmt::Display for CamMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CamMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CamMethod::parse(s)
    }
}

/// Activations and class-score gradients captured at one layer for one image.
#[derive(Debug, Clone)]
pub struct ActivationCapture {
    /// Which layer the tensors came from, e.g. `encoder.final`.
    pub layer: String,
    /// Forward activations, `(channels, h, w)`.
    pub activations: Array3<f64>,
    /// d(class score) / d(activations), same shape as `activations`.
    pub grads: Array3<f64>,
    /// Index of the class whose score the gradients explain.
    pub class_index: usize,
}

impl ActivationCapture {
    pub fn new(
        layer: impl Into<String>,
        activations: Array3<f64>,
        grads: Array3<f64>,
        class_index: usize,
    ) -> Result<Self> {
        let capture = ActivationCapture { layer: layer.into(), activations, grads, class_index };
        capture.validate()?;
        Ok(capture)
    }

    /// Gradient-free capture (enough for Eigen-CAM): zero gradients.
    pub fn from_activations(
        layer: impl Into<String>,
        activations: Array3<f64>,
        class_index: usize,
    ) -> Self {
        let grads = Array3::zeros(activations.dim());
        ActivationCapture { layer: layer.into(), activations, grads, class_index }
    }

    pub fn validate(&self) -> Result<()> {
        if self.activations.dim() != self.grads.dim() {
            return Err(Error::ShapeMismatch {
                context: "ActivationCapture",
                expected: format!("{:?}", self.activations.dim()),
                got: format!("{:?}", self.grads.dim()),
            });
        }
        let (k, h, w) = self.activations.dim();
        if k == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch {
                context: "ActivationCapture",
                expected: "non-empty (channels, h, w)".into(),
                got: format!("{:?}", self.activations.dim()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "minmax")]
    MinMax,
}

/// Rectangular region in map coordinates, clipped to the map when sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    /// `(h, w)` saliency grid at the captured layer's spatial dims.
    pub values: Array2<f64>,
    pub normalization: Normalization,
    pub method: CamMethod,
    pub class_index: usize,
}

impl Heatmap {
    /// Rescale to [0, 1]. A constant map has no range to stretch: it becomes
    /// all ones when positive and all zeros otherwise, so a uniformly salient
    /// map stays salient and an empty map stays empty.
    pub fn minmax(&self) -> Heatmap {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let values = if hi == lo {
            let fill = if hi > 0.0 { 1.0 } else { 0.0 };
            Array2::from_elem(self.values.dim(), fill)
        } else {
            self.values.mapv(|v| (v - lo) / (hi - lo))
        };
        Heatmap {
            values,
            normalization: Normalization::MinMax,
            method: self.method,
            class_index: self.class_index,
        }
    }

    /// Fraction of total map mass inside `rect` (0 when the map sums to 0).
    pub fn region_mass(&self, rect: &Rect) -> f64 {
        let total: f64 = self.values.sum();
        if total <= 0.0 {
            return 0.0;
        }
        let (h, w) = self.values.dim();
        let row_end = rect.top.saturating_add(rect.height).min(h);
        let col_end = rect.left.saturating_add(rect.width).min(w);
        let mut inside = 0.0;
        for i in rect.top..row_end {
            for j in rect.left..col_end {
                inside += self.values[(i, j)];
            }
        }
        inside / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(values: Array2<f64>) -> Heatmap {
        Heatmap {
            values,
            normalization: Normalization::Raw,
            method: CamMethod::GradCam,
            class_index: 0,
        }
    }

    #[test]
    fn minmax_stretches_to_unit_interval() {
        let map = raw(ndarray::array![[1.0, 3.0], [5.0, 2.0]]);
        let m = map.minmax();
        assert_eq!(m.normalization, Normalization::MinMax);
        assert_eq!(m.values[(0, 0)], 0.0);
        assert_eq!(m.values[(1, 0)], 1.0);
        assert!((m.values[(0, 1)] - 0.5).abs() < 1e-15);
        assert!(m.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn constant_maps_normalize_by_sign() {
        let ones = raw(Array2::from_elem((3, 3), 0.7)).minmax();
        assert!(ones.values.iter().all(|&v| v == 1.0));
        let zeros = raw(Array2::zeros((3, 3))).minmax();
        assert!(zeros.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn region_mass_counts_the_clipped_window() {
        let map = raw(ndarray::array![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 4.0]]);
        let corner = Rect { top: 0, left: 0, height: 2, width: 2 };
        assert!((map.region_mass(&corner) - 0.5).abs() < 1e-15);
        // window hanging off the edge clips to the map
        let tail = Rect { top: 2, left: 2, height: 10, width: 10 };
        assert!((map.region_mass(&tail) - 0.5).abs() < 1e-15);
        let empty = raw(Array2::zeros((3, 3)));
        assert_eq!(empty.region_mass(&corner), 0.0);
    }

    #[test]
    fn capture_shape_mismatch_is_rejected() {
        let acts = Array3::zeros((2, 4, 4));
        let grads = Array3::zeros((2, 4, 5));
        assert!(ActivationCapture::new("encoder.final", acts.clone(), grads, 0).is_err());
        assert!(ActivationCapture::new("encoder.final", Array3::zeros((0, 4, 4)), Array3::zeros((0, 4, 4)), 0).is_err());
        assert!(ActivationCapture::new("encoder.final", acts.clone(), acts, 1).is_ok());
    }

    #[test]
    fn method_names_round_trip() {
        for m in CamMethod::ALL {
            assert_eq!(CamMethod::parse(m.as_str()).unwrap(), m);
        }
        assert!(CamMethod::parse("shap").is_err());
    }
}
