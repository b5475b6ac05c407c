//! The three map constructions. All of them read an [`ActivationCapture`]
//! and produce a raw heatmap at the captured layer's spatial dims; callers
//! normalize and upsample for display.

use ndarray::{Array1, Array2, Array3, Array4, Axis};

use super::{ActivationCapture, CamMethod, Heatmap, Normalization};
use crate::train::ClassifierModel;
use crate::{Error, Result};

/// Pixels whose Grad-CAM++ weight denominator is smaller than this are
/// treated as carrying no second-order signal.
pub const GRAD_CAM_PP_EPS: f64 = 1e-12;

const MAX_POWER_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-13;

fn raw_heatmap(values: Array2<f64>, method: CamMethod, class_index: usize) -> Heatmap {
    Heatmap { values, normalization: Normalization::Raw, method, class_index }
}

/// Channel weights are the spatial mean of the gradients; the map is the
/// ReLU of the weighted channel sum.
pub fn grad_cam(capture: &ActivationCapture) -> Result<Heatmap> {
    capture.validate()?;
    let (k, h, w) = capture.activations.dim();
    if capture.grads.iter().all(|&g| g == 0.0) {
        log::warn!("grad-cam: all-zero gradients at {}; emitting an empty map", capture.layer);
        return Ok(raw_heatmap(Array2::zeros((h, w)), CamMethod::GradCam, capture.class_index));
    }
    let mut values = Array2::<f64>::zeros((h, w));
    for ch in 0..k {
        let alpha = capture.grads.index_axis(Axis(0), ch).mean().expect("non-empty plane");
        values.scaled_add(alpha, &capture.activations.index_axis(Axis(0), ch));
    }
    values.mapv_inplace(|v| v.max(0.0));
    Ok(raw_heatmap(values, CamMethod::GradCam, capture.class_index))
}

/// Closed-form pixelwise weights: α = g² / (2g² + (Σ_spatial A)·g³), combined
/// with ReLU(g) and summed per channel; the weighted channel sum is then
/// ReLU-clamped like Grad-CAM.
pub fn grad_cam_pp(capture: &ActivationCapture) -> Result<Heatmap> {
    capture.validate()?;
    let (k, h, w) = capture.activations.dim();
    let mut values = Array2::<f64>::zeros((h, w));
    for ch in 0..k {
        let a = capture.activations.index_axis(Axis(0), ch);
        let g = capture.grads.index_axis(Axis(0), ch);
        let sum_a = a.sum();
        let mut weight = 0.0;
        for &gv in g.iter() {
            let g2 = gv * gv;
            let denom = 2.0 * g2 + sum_a * g2 * gv;
            if denom.abs() >= GRAD_CAM_PP_EPS {
                weight += (g2 / denom) * gv.max(0.0);
            }
        }
        values.scaled_add(weight, &a);
    }
    values.mapv_inplace(|v| v.max(0.0));
    Ok(raw_heatmap(values, CamMethod::GradCamPp, capture.class_index))
}

/// Gradient-free: flatten the activations to an (h·w) × channels matrix,
/// project onto its first right singular vector (power iteration on the
/// channel Gram matrix), and keep the projection magnitude.
pub fn eigen_cam(capture: &ActivationCapture) -> Result<Heatmap> {
    capture.validate()?;
    let (k, h, w) = capture.activations.dim();
    let class_index = capture.class_index;
    if capture.activations.iter().all(|&a| a == 0.0) {
        log::warn!("eigen-cam: all-zero activations at {}; emitting an empty map", capture.layer);
        return Ok(raw_heatmap(Array2::zeros((h, w)), CamMethod::EigenCam, class_index));
    }

    let mut m = Array2::<f64>::zeros((h * w, k));
    for ch in 0..k {
        for i in 0..h {
            for j in 0..w {
                m[(i * w + j, ch)] = capture.activations[(ch, i, j)];
            }
        }
    }
    let gram = m.t().dot(&m);

    // start at the strongest channel so the first step already lies in the
    // Gram matrix's range
    let start = (0..k)
        .max_by(|&a, &b| gram[(a, a)].partial_cmp(&gram[(b, b)]).expect("finite"))
        .expect("k > 0");
    let mut v = Array1::<f64>::zeros(k);
    v[start] = 1.0;
    for _ in 0..MAX_POWER_ITERS {
        let u = gram.dot(&v);
        let norm = u.dot(&u).sqrt();
        if norm == 0.0 {
            break;
        }
        let u = u / norm;
        let delta = (&u - &v).mapv(f64::abs).sum();
        v = u;
        if delta < POWER_TOL {
            break;
        }
    }

    let mut proj = m.dot(&v);
    if proj.mean().expect("non-empty") < 0.0 {
        proj.mapv_inplace(|p| -p);
    }
    let values = Array2::from_shape_fn((h, w), |(i, j)| proj[i * w + j].abs());
    Ok(raw_heatmap(values, CamMethod::EigenCam, class_index))
}

/// Run one inference pass and capture, per image, the final-stage activations
/// together with the analytic gradient of the requested class logit. The
/// feature path after that layer is average-pool → linear, so
/// d(logit_c)/d(map[k, i, j]) = head_weight[c, k] / (h·w) exactly.
pub fn capture_from_classifier(
    model: &ClassifierModel,
    images: &Array4<f64>,
    classes: &[usize],
) -> Result<Vec<ActivationCapture>> {
    let n = images.dim().0;
    if classes.len() != n {
        return Err(Error::ShapeMismatch {
            context: "capture_from_classifier",
            expected: format!("{n} class indices"),
            got: format!("{}", classes.len()),
        });
    }
    let num_classes = model.head.num_classes();
    if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
        return Err(Error::InvalidConfig(format!(
            "class index {bad} out of range for {num_classes} classes"
        )));
    }

    let (_, map) = model.encoder.forward_inference_with_map(images)?;
    let (_, k, h, w) = map.dim();
    let weight = &model.head.fc.weight.value;
    let scale = 1.0 / (h * w) as f64;

    let mut captures = Vec::with_capacity(n);
    for (i, &class) in classes.iter().enumerate() {
        let activations = map.index_axis(Axis(0), i).to_owned();
        let mut grads = Array3::<f64>::zeros((k, h, w));
        for ch in 0..k {
            grads.index_axis_mut(Axis(0), ch).fill(weight[(class, ch)] * scale);
        }
        captures.push(ActivationCapture {
            layer: "encoder.final".to_string(),
            activations,
            grads,
            class_index: class,
        });
    }
    Ok(captures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::EncoderSpec;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_capture(k: usize, h: usize, w: usize, seed: u64) -> ActivationCapture {
        let mut rng = rng_from_seed(seed);
        let activations = Array3::from_shape_fn((k, h, w), |_| rng.random_range(-1.0..1.0));
        let grads = Array3::from_shape_fn((k, h, w), |_| rng.random_range(-1.0..1.0));
        ActivationCapture::new("encoder.final", activations, grads, 0).unwrap()
    }

    #[test]
    fn uniform_capture_gives_uniform_positive_map() {
        let capture = ActivationCapture::new(
            "encoder.final",
            Array3::from_elem((1, 4, 4), 1.0),
            Array3::from_elem((1, 4, 4), 1.0),
            2,
        )
        .unwrap();
        let map = grad_cam(&capture).unwrap();
        assert_eq!(map.method, CamMethod::GradCam);
        assert_eq!(map.class_index, 2);
        assert!(map.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let mm = map.minmax();
        assert!(mm.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn negative_gradients_clamp_to_zero() {
        let capture = ActivationCapture::new(
            "encoder.final",
            Array3::from_elem((1, 4, 4), 1.0),
            Array3::from_elem((1, 4, 4), -1.0),
            0,
        )
        .unwrap();
        let map = grad_cam(&capture).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gradients_give_zero_maps_not_errors() {
        let mut capture = random_capture(3, 5, 5, 1);
        capture.grads.fill(0.0);
        assert!(grad_cam(&capture).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(grad_cam_pp(&capture).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_cam_matches_scalar_loops() {
        let capture = random_capture(4, 5, 6, 7);
        let map = grad_cam(&capture).unwrap();
        let (k, h, w) = capture.activations.dim();
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for ch in 0..k {
                    let mut alpha = 0.0;
                    for a in 0..h {
                        for b in 0..w {
                            alpha += capture.grads[(ch, a, b)];
                        }
                    }
                    alpha /= (h * w) as f64;
                    acc += alpha * capture.activations[(ch, i, j)];
                }
                assert!((map.values[(i, j)] - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_cam_pp_matches_scalar_loops() {
        let capture = random_capture(4, 5, 6, 11);
        let map = grad_cam_pp(&capture).unwrap();
        let (k, h, w) = capture.activations.dim();
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for ch in 0..k {
                    let mut sum_a = 0.0;
                    for a in 0..h {
                        for b in 0..w {
                            sum_a += capture.activations[(ch, a, b)];
                        }
                    }
                    let mut weight = 0.0;
                    for a in 0..h {
                        for b in 0..w {
                            let g = capture.grads[(ch, a, b)];
                            let denom = 2.0 * g * g + sum_a * g * g * g;
                            if denom.abs() >= GRAD_CAM_PP_EPS {
                                weight += (g * g / denom) * g.max(0.0);
                            }
                        }
                    }
                    acc += weight * capture.activations[(ch, i, j)];
                }
                assert!(
                    (map.values[(i, j)] - acc.max(0.0)).abs() < 1e-9,
                    "pixel ({i}, {j}): {} vs {}",
                    map.values[(i, j)],
                    acc.max(0.0)
                );
            }
        }
    }

    #[test]
    fn grad_cam_pp_single_pixel_support() {
        let mut activations = Array3::zeros((2, 4, 4));
        let mut grads = Array3::zeros((2, 4, 4));
        activations[(0, 1, 2)] = 2.0;
        grads[(0, 1, 2)] = 0.5;
        let capture = ActivationCapture::new("encoder.final", activations, grads, 0).unwrap();
        let pp = grad_cam_pp(&capture).unwrap();
        let gc = grad_cam(&capture).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if (i, j) == (1, 2) {
                    assert!(pp.values[(i, j)] > 0.0);
                    assert!(gc.values[(i, j)] > 0.0);
                } else {
                    assert_eq!(pp.values[(i, j)], 0.0);
                    assert_eq!(gc.values[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn minmax_grad_cam_is_scale_invariant() {
        let capture = random_capture(3, 6, 6, 21);
        let base = grad_cam(&capture).unwrap().minmax();
        let mut scaled = capture.clone();
        scaled.activations.mapv_inplace(|v| v * 3.7);
        scaled.grads.mapv_inplace(|v| v * 3.7);
        let rescaled = grad_cam(&scaled).unwrap().minmax();
        for (a, b) in base.values.iter().zip(rescaled.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_cam_recovers_rank_one_spatial_pattern() {
        let mut rng = rng_from_seed(31);
        let (h, w, k) = (5, 4, 6);
        let u = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0));
        let chan = Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0));
        let activations = Array3::from_shape_fn((k, h, w), |(c, i, j)| chan[c] * u[(i, j)]);
        let capture = ActivationCapture::from_activations("encoder.final", activations, 0);
        let map = eigen_cam(&capture).unwrap().minmax();
        let expected = Heatmap {
            values: u.mapv(f64::abs),
            normalization: Normalization::Raw,
            method: CamMethod::EigenCam,
            class_index: 0,
        }
        .minmax();
        for (a, b) in map.values.iter().zip(expected.values.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn eigen_cam_on_identical_channels_is_the_shared_map() {
        let mut rng = rng_from_seed(37);
        let shared = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
        let activations =
            Array3::from_shape_fn((5, 4, 4), |(_, i, j)| shared[(i, j)]);
        let capture = ActivationCapture::from_activations("encoder.final", activations, 1);
        let map = eigen_cam(&capture).unwrap().minmax();
        let expected = Heatmap {
            values: shared.mapv(f64::abs),
            normalization: Normalization::Raw,
            method: CamMethod::EigenCam,
            class_index: 1,
        }
        .minmax();
        for (a, b) in map.values.iter().zip(expected.values.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn eigen_cam_never_reads_gradients() {
        let capture = random_capture(4, 5, 5, 41);
        let mut gradientless = capture.clone();
        gradientless.grads.fill(0.0);
        let a = eigen_cam(&capture).unwrap();
        let b = eigen_cam(&gradientless).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn eigen_cam_zero_activations_give_zero_map() {
        let capture =
            ActivationCapture::from_activations("encoder.final", Array3::zeros((3, 4, 4)), 0);
        let map = eigen_cam(&capture).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classifier_capture_has_analytic_gradients() {
        let model = ClassifierModel::new(EncoderSpec::tiny(), 4, 5).unwrap();
        let mut rng = rng_from_seed(51);
        let images = Array4::from_shape_fn((2, 3, 32, 32), |_| rng.random_range(0.0..1.0));
        let captures = capture_from_classifier(&model, &images, &[3, 1]).unwrap();
        assert_eq!(captures.len(), 2);

        let (_, map) = model.encoder.forward_inference_with_map(&images).unwrap();
        let (_, k, h, w) = map.dim();
        for (i, capture) in captures.iter().enumerate() {
            assert_eq!(capture.activations.dim(), (k, h, w));
            assert_eq!(capture.activations, map.index_axis(Axis(0), i).to_owned());
            let class = capture.class_index;
            for ch in [0, k / 2, k - 1] {
                let expected = model.head.fc.weight.value[(class, ch)] / (h * w) as f64;
                assert!((capture.grads[(ch, h / 2, w / 2)] - expected).abs() < 1e-15);
            }
        }

        assert!(capture_from_classifier(&model, &images, &[0]).is_err());
        assert!(capture_from_classifier(&model, &images, &[0, 9]).is_err());
    }
}
