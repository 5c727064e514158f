//! Static PNG figures: heat maps and line charts drawn straight into RGB
//! buffers.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::error::{CliError, CliResult};

const ANCHORS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const GRIDLINE: Rgb<u8> = Rgb([225, 225, 225]);
const LINE: Rgb<u8> = Rgb([31, 119, 180]);
const MISSING: Rgb<u8> = Rgb([200, 200, 200]);

/// Maps `t` in `[0, 1]` onto a perceptually ordered dark-to-bright ramp.
pub fn colormap(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (ANCHORS.len() - 1) as f64;
    let i = (x.floor() as usize).min(ANCHORS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (ANCHORS[i][k] + f * (ANCHORS[i + 1][k] - ANCHORS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo <= hi).then_some((lo, hi))
}

/// Heat map with row 0 at the top, each cell drawn as a block of pixels and
/// a color bar along the bottom. Non-finite cells are grey.
pub fn heat_map(values: ArrayView2<'_, f64>) -> CliResult<RgbImage> {
    let (rows, cols) = values.dim();
    if rows == 0 || cols == 0 {
        return Err(CliError::data("cannot draw an empty map"));
    }
    let (lo, hi) = range(values.iter().copied()).ok_or_else(|| CliError::data("map has no finite values"))?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell_w = (720 / cols as u32).clamp(1, 48);
    let cell_h = (360 / rows as u32).clamp(1, 48);
    let (w, map_h) = (cols as u32 * cell_w, rows as u32 * cell_h);
    let bar = 12;
    let mut img = RgbImage::from_pixel(w, map_h + bar + 4, WHITE);
    for ((r, c), v) in values.indexed_iter() {
        let color = if v.is_finite() { colormap((v - lo) / span) } else { MISSING };
        for y in 0..cell_h {
            for x in 0..cell_w {
                img.put_pixel(c as u32 * cell_w + x, r as u32 * cell_h + y, color);
            }
        }
    }
    for x in 0..w {
        let color = colormap(x as f64 / (w.max(2) - 1) as f64);
        for y in 0..bar {
            img.put_pixel(x, map_h + 4 + y, color);
        }
    }
    Ok(img)
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Line chart of `values` at equally spaced positions, with axes, one tick
/// per point and horizontal guides at quarters of the value range.
pub fn line_chart(values: &[f64]) -> CliResult<RgbImage> {
    if values.is_empty() {
        return Err(CliError::data("cannot draw a chart without points"));
    }
    let (lo, hi) = range(values.iter().copied()).ok_or_else(|| CliError::data("chart has no finite values"))?;
    let pad = if hi > lo { 0.05 * (hi - lo) } else { hi.abs().max(1.0) * 0.05 };
    let (lo, hi) = (lo - pad, hi + pad);
    let (w, h, margin) = (640i64, 360i64, 40i64);
    let mut img = RgbImage::from_pixel(w as u32, h as u32, WHITE);
    let px = |i: usize| {
        if values.len() == 1 {
            w / 2
        } else {
            margin + (i as i64) * (w - 2 * margin) / (values.len() as i64 - 1)
        }
    };
    let py = |v: f64| h - margin - ((v - lo) / (hi - lo) * (h - 2 * margin) as f64).round() as i64;
    for q in 1..=4 {
        let y = h - margin - q * (h - 2 * margin) / 4;
        draw_line(&mut img, (margin, y), (w - margin, y), GRIDLINE);
    }
    draw_line(&mut img, (margin, h - margin), (w - margin, h - margin), AXIS);
    draw_line(&mut img, (margin, margin), (margin, h - margin), AXIS);
    for i in 0..values.len() {
        draw_line(&mut img, (px(i), h - margin), (px(i), h - margin + 5), AXIS);
    }
    let points: Vec<(usize, f64)> = values.iter().copied().enumerate().filter(|(_, v)| v.is_finite()).collect();
    for pair in points.windows(2) {
        draw_line(&mut img, (px(pair[0].0), py(pair[0].1)), (px(pair[1].0), py(pair[1].1)), LINE);
    }
    for &(i, v) in &points {
        let (cx, cy) = (px(i), py(v));
        for dy in -2..=2 {
            draw_line(&mut img, (cx - 2, cy + dy), (cx + 2, cy + dy), LINE);
        }
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}
