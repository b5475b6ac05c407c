//! Stochastic image augmentation.
//!
//! Two regimes share one parameter sampler: the balancing/supervised regime
//! (rotation, shifts, zoom, flip, brightness) and the SSL view regime, which
//! adds random resized crops and Gaussian blur. Every transform is a pure
//! function of (image, config, seed); replaying a recorded seed reproduces
//! the output bit for bit, which is what makes virtual augmented manifest
//! records possible.
//!
//! Images are grayscale `H×W` grids of `f64` in `[0, 1]`. Geometry ops use
//! inverse-mapped bilinear sampling; out-of-frame reads replicate the nearest
//! edge pixel (the only supported fill mode).

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// Grayscale image: rows × columns, values in `[0, 1]`.
pub type Pixels = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationConfig {
    /// Symmetric rotation half-range in degrees: θ ~ U[−r, +r].
    pub rotation_deg: f64,
    /// Horizontal translation as a fraction of width: U[−f, +f].
    pub width_shift_frac: f64,
    /// Vertical translation as a fraction of height: U[−f, +f].
    pub height_shift_frac: f64,
    /// Zoom factor z ~ 1 + U[−f, +f].
    pub zoom_frac: f64,
    pub horizontal_flip: bool,
    /// Multiplicative brightness b ~ U[lo, hi]; result clamped to [0, 1].
    pub brightness_range: (f64, f64),
    pub fill_mode: FillMode,
    /// SSL views only: blur sigma range σ ~ U[lo, hi].
    pub gaussian_blur: Option<(f64, f64)>,
    /// SSL views only: crop area scale s ~ U[lo, hi] of the source area.
    pub random_resized_crop: Option<(f64, f64)>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 20.0,
            width_shift_frac: 0.10,
            height_shift_frac: 0.10,
            zoom_frac: 0.10,
            horizontal_flip: true,
            brightness_range: (0.8, 1.2),
            fill_mode: FillMode::Nearest,
            gaussian_blur: None,
            random_resized_crop: None,
        }
    }
}

impl AugmentationConfig {
    /// Default view-sampler configuration: the supervised parameters plus
    /// crop and blur.
    pub fn ssl_default() -> Self {
        Self {
            gaussian_blur: Some((0.1, 2.0)),
            random_resized_crop: Some((0.5, 1.0)),
            ..Self::default()
        }
    }

    /// Everything collapsed: applying this config is the identity.
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            width_shift_frac: 0.0,
            height_shift_frac: 0.0,
            zoom_frac: 0.0,
            horizontal_flip: false,
            brightness_range: (1.0, 1.0),
            fill_mode: FillMode::Nearest,
            gaussian_blur: None,
            random_resized_crop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=180.0).contains(&self.rotation_deg) {
            return bad(format!(
                "rotation_deg must be in [0, 180] (symmetric half-range), got {}",
                self.rotation_deg
            ));
        }
        for (name, f) in [
            ("width_shift_frac", self.width_shift_frac),
            ("height_shift_frac", self.height_shift_frac),
            ("zoom_frac", self.zoom_frac),
        ] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} must be in [0, 1), got {f}"));
            }
        }
        let (blo, bhi) = self.brightness_range;
        if !(blo > 0.0 && blo <= bhi) {
            return bad(format!("brightness_range needs 0 < lo <= hi, got [{blo}, {bhi}]"));
        }
        if let Some((lo, hi)) = self.gaussian_blur {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("gaussian_blur sigma needs 0 < lo <= hi, got [{lo}, {hi}]"));
            }
        }
        if let Some((lo, hi)) = self.random_resized_crop {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!(
                    "random_resized_crop scale needs 0 < lo <= hi <= 1, got [{lo}, {hi}]"
                ));
            }
        }
        Ok(())
    }
}

/// One concrete draw of every augmentation parameter. Sampled separately
/// from application so range compliance is testable on the parameters
/// themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub shift_x_frac: f64,
    pub shift_y_frac: f64,
    pub zoom: f64,
    pub flip: bool,
    pub brightness: f64,
    pub blur_sigma: Option<f64>,
    pub crop: Option<CropParams>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropParams {
    /// Area fraction of the source retained by the crop.
    pub scale: f64,
    /// Horizontal placement of the crop window in [0, 1] of the slack.
    pub left_frac: f64,
    /// Vertical placement of the crop window in [0, 1] of the slack.
    pub top_frac: f64,
}

impl AugmentParams {
    /// Draw order is fixed (rotation, shift x, shift y, zoom, flip,
    /// brightness, blur, crop) — recorded seeds replay against it.
    pub fn sample(cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Self {
        let r = cfg.rotation_deg;
        let rotation_deg = rng.random_range(-r..=r);
        let sx = cfg.width_shift_frac;
        let shift_x_frac = rng.random_range(-sx..=sx);
        let sy = cfg.height_shift_frac;
        let shift_y_frac = rng.random_range(-sy..=sy);
        let z = cfg.zoom_frac;
        let zoom = 1.0 + rng.random_range(-z..=z);
        let flip = cfg.horizontal_flip && rng.random_bool(0.5);
        let (blo, bhi) = cfg.brightness_range;
        let brightness = rng.random_range(blo..=bhi);
        let blur_sigma = cfg.gaussian_blur.map(|(lo, hi)| rng.random_range(lo..=hi));
        let crop = cfg.random_resized_crop.map(|(lo, hi)| CropParams {
            scale: rng.random_range(lo..=hi),
            left_frac: rng.random_range(0.0..=1.0),
            top_frac: rng.random_range(0.0..=1.0),
        });
        Self {
            rotation_deg,
            shift_x_frac,
            shift_y_frac,
            zoom,
            flip,
            brightness,
            blur_sigma,
            crop,
        }
    }

    fn geometry_is_identity(&self) -> bool {
        self.rotation_deg == 0.0
            && self.shift_x_frac == 0.0
            && self.shift_y_frac == 0.0
            && self.zoom == 1.0
    }

    fn is_identity(&self) -> bool {
        self.geometry_is_identity()
            && !self.flip
            && self.brightness == 1.0
            && self.blur_sigma.is_none()
            && self.crop.is_none()
    }
}

fn bilinear_clamped(img: &Pixels, y: f64, x: f64) -> f64 {
    let (h, w) = img.dim();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = x0 as isize;
    let yi = y0 as isize;
    let (x0c, x1c) = (clamp(xi, w), clamp(xi + 1, w));
    let (y0c, y1c) = (clamp(yi, h), clamp(yi + 1, h));
    let top = img[(y0c, x0c)] * (1.0 - fx) + img[(y0c, x1c)] * fx;
    let bot = img[(y1c, x0c)] * (1.0 - fx) + img[(y1c, x1c)] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Rotation, zoom, and shift fused into one inverse-mapped resample about
/// the image center. Output dims equal input dims; off-frame samples
/// replicate the nearest edge (fill_mode = nearest).
fn warp_affine(img: &Pixels, rotation_deg: f64, shift_x: f64, shift_y: f64, zoom: f64) -> Pixels {
    let (h, w) = img.dim();
    let theta = rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let tx = shift_x * w as f64;
    let ty = shift_y * h as f64;
    Array2::from_shape_fn((h, w), |(r, c)| {
        let x1 = c as f64 - tx - cx;
        let y1 = r as f64 - ty - cy;
        let xs = (cos * x1 + sin * y1) / zoom + cx;
        let ys = (-sin * x1 + cos * y1) / zoom + cy;
        bilinear_clamped(img, ys, xs)
    })
}

fn flip_horizontal(img: &Pixels) -> Pixels {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(r, c)| img[(r, w - 1 - c)])
}

fn apply_brightness(img: &mut Pixels, factor: f64) {
    img.mapv_inplace(|v| (v * factor).clamp(0.0, 1.0));
}

/// Separable Gaussian blur with edge-replicated taps.
pub fn gaussian_blur(img: &Pixels, sigma: f64) -> Pixels {
    let (h, w) = img.dim();
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut horiz = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let cc = clamp(c as isize + ki as isize - radius, w);
                acc += img[(r, cc)] * k;
            }
            horiz[(r, c)] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let rr = clamp(r as isize + ki as isize - radius, h);
                acc += horiz[(rr, c)] * k;
            }
            out[(r, c)] = acc;
        }
    }
    out
}

/// Cut the crop window described by `crop` out of `img`. The window side is
/// √scale of each source side (aspect preserved), placed by the fractional
/// offsets; dims shrink, contents are untouched.
pub fn apply_crop(img: &Pixels, crop: &CropParams) -> Pixels {
    let (h, w) = img.dim();
    let side = crop.scale.sqrt();
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let top = ((h - ch) as f64 * crop.top_frac).round() as usize;
    let left = ((w - cw) as f64 * crop.left_frac).round() as usize;
    img.slice(ndarray::s![top..top + ch, left..left + cw]).to_owned()
}

/// Bilinear resize with half-pixel corner alignment. Resizing to the input
/// dims is exactly the identity.
pub fn resize_bilinear(img: &Pixels, out_h: usize, out_w: usize) -> Pixels {
    let (h, w) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let ys = (r as f64 + 0.5) * sy - 0.5;
        let xs = (c as f64 + 0.5) * sx - 0.5;
        bilinear_clamped(img, ys, xs)
    })
}

/// Apply concrete parameters: warp → flip → brightness → blur. The crop
/// field is ignored here (it changes dims and belongs to the view sampler).
pub fn apply_params(img: &Pixels, params: &AugmentParams) -> Pixels {
    if params.is_identity() {
        return img.clone();
    }
    let mut out = if params.geometry_is_identity() {
        img.clone()
    } else {
        warp_affine(
            img,
            params.rotation_deg,
            params.shift_x_frac,
            params.shift_y_frac,
            params.zoom,
        )
    };
    if params.flip {
        out = flip_horizontal(&out);
    }
    if params.brightness != 1.0 {
        apply_brightness(&mut out, params.brightness);
    }
    if let Some(sigma) = params.blur_sigma {
        out = gaussian_blur(&out, sigma);
    }
    out
}

/// The balancing/supervised transform: one seeded draw of the config's
/// parameters applied in place. Output dims equal input dims.
pub fn augment_image(img: &Pixels, cfg: &AugmentationConfig, seed: u64) -> Pixels {
    let mut rng = rng_from_seed(seed);
    let params = AugmentParams::sample(cfg, &mut rng);
    apply_params(img, &params)
}

/// Two independent stochastic views of one source image, each resized to
/// `resolution` — the SSL positive pair. Pure in (img, cfg, seed).
pub fn sample_two_views(
    img: &Pixels,
    cfg: &AugmentationConfig,
    seed: u64,
    resolution: usize,
) -> (Pixels, Pixels) {
    let make_view = |index: u64| {
        let mut rng = rng_from_seed(derive_seed(seed, "view", index));
        let params = AugmentParams::sample(cfg, &mut rng);
        let cropped = match &params.crop {
            Some(crop) => apply_crop(img, crop),
            None => img.clone(),
        };
        let resized = resize_bilinear(&cropped, resolution, resolution);
        apply_params(&resized, &AugmentParams { crop: None, ..params })
    };
    (make_view(0), make_view(1))
}
