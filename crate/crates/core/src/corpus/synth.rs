//! Synthetic stand-in for a chest X-ray corpus.
//!
//! Normal images are smooth: a linear intensity gradient plus a few broad
//! Gaussian blobs. Anomalies are drawn the same way and then receive one to
//! three square patches of per-pixel uniform noise, which a smooth
//! reconstruction cannot follow.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ClassLabel, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::seed::{rng_for, STREAM_SYNTH};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub side: usize,
    pub seed: u64,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

fn smooth_field(rng: &mut ChaCha8Rng, side: usize) -> Array2<f64> {
    let s = side as f64;
    let base = rng.random_range(0.15..0.35);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let slope = rng.random_range(0.05..0.25);
    let (dx, dy) = (angle.cos() * slope, angle.sin() * slope);
    let n_blobs = rng.random_range(2..=5);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            (
                rng.random_range(0.15..0.85) * s,
                rng.random_range(0.15..0.85) * s,
                rng.random_range(0.08..0.2) * s,
                rng.random_range(0.15..0.4),
            )
        })
        .collect();
    Array2::from_shape_fn((side, side), |(y, x)| {
        let (u, v) = (x as f64 / s - 0.5, y as f64 / s - 0.5);
        let mut val = base + dx * u + dy * v;
        for &(cx, cy, sigma, amp) in &blobs {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            val += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        val
    })
}

fn add_noise_patches(rng: &mut ChaCha8Rng, field: &mut Array2<f64>) {
    let side = field.nrows();
    let n_patches = rng.random_range(1..=3);
    for _ in 0..n_patches {
        let size = ((side as f64) * rng.random_range(0.15..0.25)).round().max(2.0) as usize;
        let y0 = rng.random_range(0..=side - size);
        let x0 = rng.random_range(0..=side - size);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                field[[y, x]] += rng.random_range(-0.4..0.4);
            }
        }
    }
}

/// Renders one image as 8-bit grayscale.
pub fn render(index: usize, anomaly: bool, side: usize, seed: u64) -> GrayImage {
    let mut rng = rng_for(seed, &[STREAM_SYNTH, index as u64]);
    let mut field = smooth_field(&mut rng, side);
    if anomaly {
        add_noise_patches(&mut rng, &mut field);
    }
    GrayImage::from_fn(side as u32, side as u32, |x, y| {
        Luma([(field[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// Writes `n_normal` HEALTHY and `n_anomaly` COVID PNGs plus `manifest.csv`
/// into `out_dir`. Output is a pure function of the options.
pub fn generate_synthetic_corpus(out_dir: &Path, opts: &SynthOptions) -> Result<Manifest> {
    if opts.side < 16 {
        return Err(Error::Config(format!("side must be at least 16, got {}", opts.side)));
    }
    if opts.n_normal == 0 || opts.n_anomaly == 0 {
        return Err(Error::Config("need at least one normal and one anomaly image".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut entries = Vec::with_capacity(opts.n_normal + opts.n_anomaly);
    let jobs = (0..opts.n_normal)
        .map(|i| (i, false, format!("normal_{i:05}")))
        .chain((0..opts.n_anomaly).map(|i| (opts.n_normal + i, true, format!("anomaly_{i:05}"))));
    for (index, anomaly, id) in jobs {
        let file = PathBuf::from(format!("{id}.png"));
        let img = render(index, anomaly, opts.side, opts.seed);
        let path = out_dir.join(&file);
        img.save(&path).map_err(|source| Error::Image { path, source })?;
        entries.push(ManifestEntry {
            sample_id: id,
            path: file,
            label: if anomaly {
                ClassLabel::Covid
            } else {
                ClassLabel::Healthy
            },
        });
    }
    let manifest = Manifest::new(entries, out_dir)?;
    manifest.write_csv(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_options_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad_side = SynthOptions {
            n_normal: 1,
            n_anomaly: 1,
            side: 8,
            seed: 0,
        };
        assert!(generate_synthetic_corpus(dir.path(), &bad_side).is_err());
        let no_anomalies = SynthOptions {
            n_anomaly: 0,
            side: 32,
            ..bad_side
        };
        assert!(generate_synthetic_corpus(dir.path(), &no_anomalies).is_err());
    }

    #[test]
    fn rendering_is_seeded() {
        assert_eq!(render(3, true, 32, 9), render(3, true, 32, 9));
        assert_ne!(render(3, true, 32, 9), render(3, true, 32, 10));
        assert_ne!(render(3, false, 32, 9), render(3, true, 32, 9));
    }
}
