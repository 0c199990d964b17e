//! File I/O: PNG images mapped linearly to `[0,1]` channels, mass grids
//! from PNG luminance or plain CSV, and the CSV metric writers.

use anyhow::{bail, Context, Result};
use image::{ImageBuffer, Rgb, RgbImage};
use mmot::apps::ImageGrid;
use std::fs;
use std::path::Path;

pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img
        .pixels()
        .map(|p| {
            [
                p.0[0] as f64 / 255.0,
                p.0[1] as f64 / 255.0,
                p.0[2] as f64 / 255.0,
            ]
        })
        .collect();
    Ok(ImageGrid::new(w, h, pixels)?)
}

pub fn save_image(img: &ImageGrid, path: &Path) -> Result<()> {
    let to_byte = |c: f64| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    let out: RgbImage = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.pixels()[y as usize * img.width() + x as usize];
        Rgb([to_byte(p[0]), to_byte(p[1]), to_byte(p[2])])
    });
    out.save(path)
        .with_context(|| format!("writing image {}", path.display()))
}

/// Load a non-negative mass grid of `side * side` values: PNG luminance
/// (mean of the RGB channels) or CSV (values separated by commas and/or
/// newlines). Zero entries are floored to a small positive fraction of the
/// maximum and the grid is normalized to total mass one.
pub fn load_mass_grid(path: &Path, side: usize) -> Result<Vec<f64>> {
    let n = side * side;
    let raw: Vec<f64> = if path.extension().and_then(|e| e.to_str()) == Some("png") {
        let img = image::open(path)
            .with_context(|| format!("reading image {}", path.display()))?
            .to_rgb8();
        if (img.width() as usize, img.height() as usize) != (side, side) {
            bail!(
                "{} is {}x{}, expected {side}x{side}",
                path.display(),
                img.width(),
                img.height()
            );
        }
        img.pixels()
            .map(|p| (p.0[0] as f64 + p.0[1] as f64 + p.0[2] as f64) / (3.0 * 255.0))
            .collect()
    } else {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading mass grid {}", path.display()))?;
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().with_context(|| format!("parsing '{t}'")))
            .collect::<Result<Vec<f64>>>()?
    };
    if raw.len() != n {
        bail!(
            "{} holds {} values, expected {n} for side {side}",
            path.display(),
            raw.len()
        );
    }
    if raw.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        bail!("{} contains negative or non-finite mass", path.display());
    }
    Ok(normalize_mass(&raw))
}

/// Floor zeros to 1e-8 of the max, normalize to a probability vector.
pub fn normalize_mass(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = if max > 0.0 { 1e-8 * max } else { 1.0 };
    let mut v: Vec<f64> = raw.iter().map(|&x| x.max(floor)).collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

/// Write a marginal both as raw CSV (row-major, one grid row per line) and
/// as a min-max scaled grayscale PNG for quick inspection.
pub fn save_marginal(values: &[f64], side: usize, stem: &Path) -> Result<()> {
    let csv_path = stem.with_extension("csv");
    let mut text = String::new();
    for row in 0..side {
        let cells: Vec<String> = (0..side)
            .map(|col| format!("{:.12e}", values[row * side + col]))
            .collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(&csv_path, text).with_context(|| format!("writing {}", csv_path.display()))?;

    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let png_path = stem.with_extension("png");
    let img: RgbImage = ImageBuffer::from_fn(side as u32, side as u32, |x, y| {
        let v = values[y as usize * side + x as usize];
        let b = (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8;
        Rgb([b, b, b])
    });
    img.save(&png_path)
        .with_context(|| format!("writing {}", png_path.display()))
}

/// Comma-separated metric rows with a header; '.' decimal, scientific
/// notation for the metric columns.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn fmt_metric(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn fmt_opt_metric(v: Option<f64>) -> String {
    v.map(fmt_metric).unwrap_or_default()
}
