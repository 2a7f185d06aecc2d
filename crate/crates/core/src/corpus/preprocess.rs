use std::path::Path;

use image::{DynamicImage, ImageReader};
use ndarray::Array2;
use rayon::prelude::*;

use super::{ImageSample, Manifest, ManifestEntry};
use crate::error::{Error, Result};

// ITU-R BT.601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Converts any decoded image to a single-channel intensity grid in [0, 1].
fn to_intensity(img: &DynamicImage) -> Array2<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => {
            Array2::from_shape_fn((h, w), |(y, x)| g.get_pixel(x as u32, y as u32)[0] as f64 / 255.0)
        }
        DynamicImage::ImageLumaA8(g) => {
            Array2::from_shape_fn((h, w), |(y, x)| g.get_pixel(x as u32, y as u32)[0] as f64 / 255.0)
        }
        DynamicImage::ImageLuma16(g) => {
            Array2::from_shape_fn((h, w), |(y, x)| g.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0)
        }
        DynamicImage::ImageLumaA16(g) => {
            Array2::from_shape_fn((h, w), |(y, x)| g.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0)
        }
        DynamicImage::ImageRgb8(c) => Array2::from_shape_fn((h, w), |(y, x)| {
            let p = c.get_pixel(x as u32, y as u32);
            (LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64) / 255.0
        }),
        DynamicImage::ImageRgba8(c) => Array2::from_shape_fn((h, w), |(y, x)| {
            let p = c.get_pixel(x as u32, y as u32);
            (LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64) / 255.0
        }),
        other => {
            let rgb = other.to_rgb32f();
            Array2::from_shape_fn((h, w), |(y, x)| {
                let p = rgb.get_pixel(x as u32, y as u32);
                LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64
            })
        }
    }
}

/// Bilinear resampling with half-pixel centres and edge clamping. Same-size
/// input is returned unchanged.
fn resize_bilinear(src: &Array2<f64>, side: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if h == side && w == side {
        return src.clone();
    }
    let axis = |dst: usize, src_len: usize| -> (usize, usize, f64) {
        let scale = src_len as f64 / side as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let rows: Vec<_> = (0..side).map(|y| axis(y, h)).collect();
    let cols: Vec<_> = (0..side).map(|x| axis(x, w)).collect();
    Array2::from_shape_fn((side, side), |(y, x)| {
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Grayscale, bilinear resize to `side × side`, intensities in [0, 1].
pub fn preprocess(img: &DynamicImage, side: usize) -> Result<Array2<f32>> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Data("image has no pixels".into()));
    }
    if side == 0 {
        return Err(Error::Config("target side must be positive".into()));
    }
    let resized = resize_bilinear(&to_intensity(img), side);
    Ok(resized.mapv(|v| v.clamp(0.0, 1.0) as f32))
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    let image_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    ImageReader::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?
        .with_guessed_format()
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?
        .decode()
        .map_err(image_err)
}

pub fn preprocess_file(path: &Path, side: usize) -> Result<Array2<f32>> {
    preprocess(&load_image(path)?, side)
}

/// Loads and preprocesses `entries` on `workers` threads. Output order
/// follows `entries` and does not depend on the worker count.
pub fn load_samples(
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    side: usize,
    workers: usize,
) -> Result<Vec<ImageSample>> {
    let work = || {
        entries
            .par_iter()
            .map(|e| {
                Ok(ImageSample {
                    sample_id: e.sample_id.clone(),
                    pixels: preprocess_file(&manifest.resolve(e), side)?,
                    label: e.label,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?
        .install(work)
}
