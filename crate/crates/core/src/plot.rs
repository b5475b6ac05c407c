//! Small raster plots (loss curves, 2-D scatters, confusion heatmaps) so a
//! run directory is inspectable without a plotting stack. No text rendering;
//! layout and color carry the information.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::train::{EpochPoint, MetricsReport};
use crate::{Error, Result};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const TRAIN_COLOR: Rgb<u8> = Rgb([31, 119, 180]);
const VAL_COLOR: Rgb<u8> = Rgb([214, 39, 40]);

/// Qualitative palette, cycled when there are more classes than entries.
const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

pub fn class_color(class: usize) -> Rgb<u8> {
    Rgb(PALETTE[class % PALETTE.len()])
}

fn blank(width: u32, height: u32) -> RgbImage {
    RgbImage::from_pixel(width, height, BG)
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 + t * (x1 - x0);
        let y = y0 + t * (y1 - y0);
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        if xi >= 0 && yi >= 0 && (xi as u32) < img.width() && (yi as u32) < img.height() {
            img.put_pixel(xi as u32, yi as u32, color);
        }
    }
}

fn draw_disc(img: &mut RgbImage, cx: f64, cy: f64, r: i64, color: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (xi, yi) = (cx.round() as i64 + dx, cy.round() as i64 + dy);
            if xi >= 0 && yi >= 0 && (xi as u32) < img.width() && (yi as u32) < img.height() {
                img.put_pixel(xi as u32, yi as u32, color);
            }
        }
    }
}

/// Train (blue) and validation (red) loss per epoch; the best-validation
/// epoch is marked with a disc.
pub fn curve_png(path: &Path, curve: &[EpochPoint]) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::InvalidConfig("curve plot needs at least one epoch".into()));
    }
    let (width, height) = (640u32, 400u32);
    let margin = 40.0;
    let mut img = blank(width, height);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in curve {
        for v in [p.train_loss, p.val_loss] {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidConfig("curve plot needs finite losses".into()));
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }

    let plot_w = width as f64 - 2.0 * margin;
    let plot_h = height as f64 - 2.0 * margin;
    let x_of = |epoch: usize| {
        let span = (curve.len() - 1).max(1) as f64;
        margin + epoch as f64 / span * plot_w
    };
    let y_of = |v: f64| margin + (1.0 - (v - lo) / (hi - lo)) * plot_h;

    // horizontal gridlines at quartiles of the loss range
    for q in 0..=4 {
        let y = margin + q as f64 / 4.0 * plot_h;
        draw_line(&mut img, margin, y, width as f64 - margin, y, GRID);
    }
    // axes
    draw_line(&mut img, margin, margin, margin, height as f64 - margin, AXIS);
    draw_line(
        &mut img,
        margin,
        height as f64 - margin,
        width as f64 - margin,
        height as f64 - margin,
        AXIS,
    );

    for pair in curve.windows(2) {
        draw_line(
            &mut img,
            x_of(pair[0].epoch),
            y_of(pair[0].train_loss),
            x_of(pair[1].epoch),
            y_of(pair[1].train_loss),
            TRAIN_COLOR,
        );
        draw_line(
            &mut img,
            x_of(pair[0].epoch),
            y_of(pair[0].val_loss),
            x_of(pair[1].epoch),
            y_of(pair[1].val_loss),
            VAL_COLOR,
        );
    }
    if let Some(best) = curve.iter().filter(|p| p.improved).next_back() {
        draw_disc(&mut img, x_of(best.epoch), y_of(best.val_loss), 4, VAL_COLOR);
    }

    img.save(path)?;
    Ok(())
}

/// 2-D embedding scatter, one palette color per label.
pub fn scatter_png(path: &Path, coords: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if coords.nrows() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "scatter_png",
            expected: format!("{} labels", coords.nrows()),
            got: format!("{}", labels.len()),
        });
    }
    if coords.nrows() == 0 || coords.ncols() != 2 {
        return Err(Error::InvalidConfig("scatter plot needs (n, 2) coordinates".into()));
    }
    let (width, height) = (600u32, 600u32);
    let margin = 30.0;
    let mut img = blank(width, height);

    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in coords.rows() {
        x_lo = x_lo.min(row[0]);
        x_hi = x_hi.max(row[0]);
        y_lo = y_lo.min(row[1]);
        y_hi = y_hi.max(row[1]);
    }
    if x_hi - x_lo < 1e-12 {
        x_hi = x_lo + 1.0;
    }
    if y_hi - y_lo < 1e-12 {
        y_hi = y_lo + 1.0;
    }

    let plot = width as f64 - 2.0 * margin;
    for (row, &label) in coords.rows().into_iter().zip(labels) {
        let x = margin + (row[0] - x_lo) / (x_hi - x_lo) * plot;
        let y = margin + (1.0 - (row[1] - y_lo) / (y_hi - y_lo)) * plot;
        draw_disc(&mut img, x, y, 3, class_color(label));
    }

    img.save(path)?;
    Ok(())
}

/// Row-normalized confusion heatmap: rows are true classes, columns are
/// predictions, darker is more. The diagonal of a good classifier stands out.
pub fn confusion_png(path: &Path, report: &MetricsReport) -> Result<()> {
    let k = report.confusion.len();
    if k == 0 {
        return Err(Error::InvalidConfig("confusion plot needs at least one class".into()));
    }
    let cell = (512 / k as u32).clamp(8, 64);
    let side = cell * k as u32 + 2;
    let mut img = blank(side, side);

    for (r, row) in report.confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        for (c, &count) in row.iter().enumerate() {
            let frac = if support == 0 { 0.0 } else { count as f64 / support as f64 };
            // white → saturated blue
            let channel = |base: u8| (255.0 - frac * (255.0 - base as f64)).round() as u8;
            let color = Rgb([channel(31), channel(119), channel(180)]);
            for dy in 0..cell {
                for dx in 0..cell {
                    img.put_pixel(1 + c as u32 * cell + dx, 1 + r as u32 * cell + dy, color);
                }
            }
        }
    }

    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassTaxonomy;
    use crate::train::compute_metrics;
    use ndarray::array;
    use tempfile::TempDir;

    fn points(curve: &[(f64, f64)]) -> Vec<EpochPoint> {
        curve
            .iter()
            .enumerate()
            .map(|(epoch, &(train_loss, val_loss))| EpochPoint {
                epoch,
                train_loss,
                val_loss,
                improved: epoch == 1,
            })
            .collect()
    }

    #[test]
    fn curve_plot_writes_a_decodable_png() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("curve.png");
        curve_png(&path, &points(&[(1.0, 1.2), (0.5, 0.8), (0.4, 0.9)])).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (640, 400));
        // something other than background got painted
        assert!(img.pixels().any(|p| *p == TRAIN_COLOR));
        assert!(img.pixels().any(|p| *p == VAL_COLOR));
    }

    #[test]
    fn degenerate_curves_are_rejected() {
        let dir = TempDir::new().unwrap();
        assert!(curve_png(&dir.path().join("c.png"), &[]).is_err());
        assert!(curve_png(
            &dir.path().join("c.png"),
            &points(&[(f64::NAN, f64::NAN)])
        )
        .is_err());
        // constant losses still plot (range is widened, not divided by zero)
        curve_png(&dir.path().join("flat.png"), &points(&[(1.0, 1.0), (1.0, 1.0)])).unwrap();
    }

    #[test]
    fn scatter_colors_every_labeled_point() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("scatter.png");
        let coords = array![[0.0, 0.0], [1.0, 1.0], [-1.0, 2.0]];
        scatter_png(&path, &coords, &[0, 1, 2]).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        for label in 0..3 {
            assert!(img.pixels().any(|p| *p == class_color(label)), "class {label} missing");
        }
        assert!(scatter_png(&path, &coords, &[0, 1]).is_err());
    }

    #[test]
    fn confusion_heatmap_dimensions_track_class_count() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("confusion.png");
        let taxonomy = ClassTaxonomy::synthetic(3).unwrap();
        let report =
            compute_metrics(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 2, 0], &taxonomy).unwrap();
        confusion_png(&path, &report).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        let cell = (512 / 3u32).clamp(8, 64);
        assert_eq!(img.width(), cell * 3 + 2);
    }
}
