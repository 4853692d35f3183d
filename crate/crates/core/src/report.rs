//! Sample grids for generated images.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cgan::Generator;
use crate::datasets::{FeatureShape, Label};
use crate::error::{Error, Result};

const PAD: u32 = 2;
const SEPARATOR: Rgb<u8> = Rgb([220, 30, 30]);

/// Lays out `rows * columns` samples row-major, one class per row. A red
/// band sits above row `negative_from` when given.
pub fn write_sample_grid(
    path: &Path,
    samples: &Array2<f64>,
    shape: &FeatureShape,
    rows: usize,
    columns: usize,
    negative_from: Option<usize>,
) -> Result<()> {
    let FeatureShape::Image {
        channels,
        height,
        width,
    } = *shape
    else {
        return Err(Error::Argument("sample grids need image-shaped data".into()));
    };
    if samples.nrows() != rows * columns || samples.ncols() != shape.len() {
        return Err(Error::Argument("sample count does not fill the grid".into()));
    }
    let (h, w) = (height as u32, width as u32);
    let total_w = columns as u32 * (w + PAD) + PAD;
    let total_h = rows as u32 * (h + PAD) + PAD;
    let mut img = RgbImage::from_pixel(total_w, total_h, Rgb([255, 255, 255]));
    for (i, row) in samples.rows().into_iter().enumerate() {
        let (r, c) = ((i / columns) as u32, (i % columns) as u32);
        let (ox, oy) = (PAD + c * (w + PAD), PAD + r * (h + PAD));
        for y in 0..height {
            for x in 0..width {
                let base = (y * width + x) * channels;
                let px = |ch: usize| (row[base + ch.min(channels - 1)].clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(ox + x as u32, oy + y as u32, Rgb([px(0), px(1), px(2)]));
            }
        }
    }
    if let Some(neg) = negative_from.filter(|&n| n > 0 && n < rows) {
        let y0 = neg as u32 * (h + PAD);
        for y in y0..y0 + PAD {
            for x in 0..total_w {
                img.put_pixel(x, y, SEPARATOR);
            }
        }
    }
    img.save(path)?;
    Ok(())
}

#[derive(Serialize)]
struct GridManifest {
    rows: usize,
    columns: usize,
    /// Class shown in each grid row.
    row_labels: Vec<usize>,
    negative_rows_from: Option<usize>,
}

pub fn write_grid_manifest(path: &Path, rows: usize, columns: usize, negative_from: Option<usize>) -> Result<()> {
    let m = GridManifest {
        rows,
        columns,
        row_labels: (0..rows).collect(),
        negative_rows_from: negative_from,
    };
    std::fs::write(path, serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

/// `columns` samples of every generator class, class-major, from a fixed seed.
pub fn sample_by_class(generator: &Generator, columns: usize, seed: u64) -> (Array2<f64>, Vec<Label>) {
    let labels: Vec<Label> = (0..generator.classes)
        .flat_map(|c| std::iter::repeat_n(c, columns))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (generator.sample(&mut rng, &labels), labels)
}
