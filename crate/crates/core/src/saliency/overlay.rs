//! Rendering: bilinear upsampling of a normalized map to image resolution and
//! alpha-blending it over the grayscale input with a fixed five-stop ramp.
//!
//! Everything here is pinned for bit-stable golden images: align-corners
//! bilinear sampling, the blue→cyan→green→yellow→red color stops at
//! t = 0, ¼, ½, ¾, 1, blend weight `OVERLAY_ALPHA · t`, and `f64::round`
//! byte quantization.

use image::{Rgb, RgbImage};
use ndarray::Array2;

use super::{Heatmap, Normalization};
use crate::{Error, Result};

/// Blend weight of the colormap at full map intensity.
pub const OVERLAY_ALPHA: f64 = 0.45;

const COLOR_STOPS: [[f64; 3]; 5] =
    [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];

/// Piecewise-linear ramp through `COLOR_STOPS`; input clamped to [0, 1].
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let scaled = t * (COLOR_STOPS.len() - 1) as f64;
    let lo = (scaled.floor() as usize).min(COLOR_STOPS.len() - 2);
    let frac = scaled - lo as f64;
    let a = COLOR_STOPS[lo];
    let b = COLOR_STOPS[lo + 1];
    [
        a[0] + (b[0] - a[0]) * frac,
        a[1] + (b[1] - a[1]) * frac,
        a[2] + (b[2] - a[2]) * frac,
    ]
}

/// Align-corners bilinear resampling: output corners sample input corners
/// exactly, interior points interpolate the four neighbours.
pub fn bilinear_upsample(map: &Array2<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (in_h, in_w) = map.dim();
    if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::InvalidConfig(format!(
            "cannot resample {in_h}x{in_w} map to {out_h}x{out_w}"
        )));
    }
    // multiply before dividing so grid-aligned samples (corners included)
    // land on exact source coordinates
    let src = |o: usize, in_len: usize, out_len: usize| -> f64 {
        if out_len > 1 { (o * (in_len - 1)) as f64 / (out_len - 1) as f64 } else { 0.0 }
    };
    let mut out = Array2::zeros((out_h, out_w));
    for oy in 0..out_h {
        let fy = src(oy, in_h, out_h);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = src(ox, in_w, out_w);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let wx = fx - x0 as f64;
            let top = map[(y0, x0)] * (1.0 - wx) + map[(y0, x1)] * wx;
            let bottom = map[(y1, x0)] * (1.0 - wx) + map[(y1, x1)] * wx;
            out[(oy, ox)] = top * (1.0 - wy) + bottom * wy;
        }
    }
    Ok(out)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Plain grayscale render of a [0, 1] image; the no-saliency baseline.
pub fn render_gray(gray: &Array2<f64>) -> RgbImage {
    let (h, w) = gray.dim();
    let mut img = RgbImage::new(w as u32, h as u32);
    for ((y, x), &g) in gray.indexed_iter() {
        let b = to_byte(g);
        img.put_pixel(x as u32, y as u32, Rgb([b, b, b]));
    }
    img
}

/// Blend a minmax-normalized heatmap over a grayscale [0, 1] image. Blend
/// weight is proportional to the map value, so unsalient pixels pass the
/// input through untouched.
pub fn overlay(heatmap: &Heatmap, gray: &Array2<f64>) -> Result<RgbImage> {
    if heatmap.normalization != Normalization::MinMax {
        return Err(Error::InvalidConfig(
            "overlay requires a minmax-normalized heatmap".into(),
        ));
    }
    let (h, w) = gray.dim();
    let up = bilinear_upsample(&heatmap.values, h, w)?;
    let mut img = RgbImage::new(w as u32, h as u32);
    for ((y, x), &g) in gray.indexed_iter() {
        let t = up[(y, x)].clamp(0.0, 1.0);
        let a = OVERLAY_ALPHA * t;
        let color = colormap(t);
        let g = g.clamp(0.0, 1.0);
        let px = [
            to_byte((1.0 - a) * g + a * color[0]),
            to_byte((1.0 - a) * g + a * color[1]),
            to_byte((1.0 - a) * g + a * color[2]),
        ];
        img.put_pixel(x as u32, y as u32, Rgb(px));
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::saliency::CamMethod;
    use rand::Rng;

    fn minmax_map(values: Array2<f64>) -> Heatmap {
        Heatmap {
            values,
            normalization: Normalization::MinMax,
            method: CamMethod::GradCam,
            class_index: 0,
        }
    }

    #[test]
    fn upsample_preserves_corners_and_range() {
        let mut rng = rng_from_seed(3);
        let map = Array2::from_shape_fn((5, 7), |_| rng.random_range(0.0..1.0));
        let up = bilinear_upsample(&map, 32, 48).unwrap();
        assert_eq!(up.dim(), (32, 48));
        assert_eq!(up[(0, 0)], map[(0, 0)]);
        assert_eq!(up[(31, 47)], map[(4, 6)]);
        let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(up.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn upsample_of_constant_map_is_constant() {
        let map = Array2::from_elem((3, 3), 0.6);
        let up = bilinear_upsample(&map, 10, 10).unwrap();
        assert!(up.iter().all(|&v| (v - 0.6).abs() < 1e-15));
        assert!(bilinear_upsample(&Array2::zeros((0, 3)), 4, 4).is_err());
    }

    #[test]
    fn zero_map_overlay_is_the_input() {
        let mut rng = rng_from_seed(5);
        let gray = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..1.0));
        let out = overlay(&minmax_map(Array2::zeros((4, 4))), &gray).unwrap();
        assert_eq!(out, render_gray(&gray));
    }

    #[test]
    fn full_map_on_black_is_a_uniform_tint() {
        let gray = Array2::zeros((8, 8));
        let out = overlay(&minmax_map(Array2::from_elem((4, 4), 1.0)), &gray).unwrap();
        let expected = Rgb([to_byte(OVERLAY_ALPHA), 0, 0]);
        assert!(out.pixels().all(|&p| p == expected));
    }

    #[test]
    fn overlay_matches_input_dims_for_any_map_shape() {
        let gray = Array2::zeros((32, 20));
        let out = overlay(&minmax_map(Array2::from_elem((5, 7), 0.3)), &gray).unwrap();
        assert_eq!((out.height(), out.width()), (32, 20));
    }

    #[test]
    fn raw_maps_are_refused() {
        let raw = Heatmap {
            values: Array2::zeros((4, 4)),
            normalization: Normalization::Raw,
            method: CamMethod::GradCam,
            class_index: 0,
        };
        assert!(overlay(&raw, &Array2::zeros((8, 8))).is_err());
    }

    #[test]
    fn colormap_hits_the_documented_stops() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(colormap(0.25), [0.0, 1.0, 1.0]);
        assert_eq!(colormap(0.5), [0.0, 1.0, 0.0]);
        assert_eq!(colormap(0.75), [1.0, 1.0, 0.0]);
        assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(colormap(-3.0), colormap(0.0));
        assert_eq!(colormap(7.0), colormap(1.0));
    }
}
