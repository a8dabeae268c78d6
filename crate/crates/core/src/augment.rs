//! Camera-roll perturbation of driving images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sample_angle, PerturbDistribution};
use crate::raster::Image;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("no samples to perturb")]
    EmptyDataset,
    #[error("perturbation distribution has no angles")]
    EmptyDistribution,
    #[error("manifest has {manifest} entries for {samples} samples")]
    ManifestLength { manifest: usize, samples: usize },
    #[error("manifest entry {index} names '{expected}' but sample is '{found}'")]
    ManifestId {
        index: usize,
        expected: String,
        found: String,
    },
}

/// A driving frame and its normalized steering label in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSample {
    pub id: String,
    pub image: Image,
    pub steering: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub applied_angle_deg: f64,
    pub draw_index: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbManifest {
    /// Whether rotated frames were zoomed to hide the zero-filled corners.
    #[serde(default)]
    pub center_crop: bool,
    pub entries: Vec<ManifestEntry>,
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90.
fn sin_cos_deg(angle_deg: f64) -> (f64, f64) {
    let r = angle_deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        angle_deg.to_radians().sin_cos()
    }
}

/// Bilinear sample with zero padding outside the image.
#[inline]
fn sample_bilinear(img: &Image, sx: f64, sy: f64, c: usize) -> f32 {
    let (w, h) = (img.width as isize, img.height as isize);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let px = |x: isize, y: isize| -> f32 {
        if x >= 0 && y >= 0 && x < w && y < h {
            img.get(x as usize, y as usize, c)
        } else {
            0.0
        }
    };
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
    let bottom = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotates about the image centre, then magnifies by `zoom` (1 = none).
/// Positive angles turn the content counter-clockwise as displayed.
pub fn rotate_zoom_image(image: &Image, angle_deg: f64, zoom: f64) -> Image {
    if angle_deg == 0.0 && zoom == 1.0 {
        return image.clone();
    }
    let (sin, cos) = sin_cos_deg(angle_deg);
    let cx = (image.width as f64 - 1.0) / 2.0;
    let cy = (image.height as f64 - 1.0) / 2.0;
    let mut out = Image::zeros(image.width, image.height, image.channels);
    for y in 0..image.height {
        let dy = (y as f64 - cy) / zoom;
        for x in 0..image.width {
            let dx = (x as f64 - cx) / zoom;
            // inverse map: rotate the output offset by -angle (y points down)
            let sx = cx + (cos * dx - sin * dy);
            let sy = cy + (sin * dx + cos * dy);
            if sx <= -1.0 || sy <= -1.0 || sx >= image.width as f64 || sy >= image.height as f64 {
                continue;
            }
            for c in 0..image.channels {
                out.set(x, y, c, sample_bilinear(image, sx, sy, c).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// In-plane rotation with bilinear resampling and zero fill.
pub fn rotate_image(image: &Image, angle_deg: f64) -> Image {
    rotate_zoom_image(image, angle_deg, 1.0)
}

/// Smallest magnification that keeps a rotated frame free of fill corners.
pub fn crop_zoom(width: usize, height: usize, angle_deg: f64) -> f64 {
    let (sin, cos) = sin_cos_deg(angle_deg);
    let (sin, cos) = (sin.abs(), cos.abs());
    let (w, h) = (width as f64, height as f64);
    (cos + sin * h / w).max(cos + sin * w / h)
}

fn perturb_one(sample: &DriveSample, angle: f64, center_crop: bool) -> DriveSample {
    let zoom = if center_crop {
        crop_zoom(sample.image.width, sample.image.height, angle)
    } else {
        1.0
    };
    DriveSample {
        id: sample.id.clone(),
        image: rotate_zoom_image(&sample.image, angle, zoom),
        steering: sample.steering,
    }
}

/// Rotates sample `i` by `sample_angle(dist, i)`; labels are carried over.
pub fn perturb_dataset(
    samples: &[DriveSample],
    dist: &PerturbDistribution,
    center_crop: bool,
) -> Result<(Vec<DriveSample>, PerturbManifest), AugmentError> {
    if samples.is_empty() {
        return Err(AugmentError::EmptyDataset);
    }
    if dist.angles.is_empty() {
        return Err(AugmentError::EmptyDistribution);
    }
    let entries: Vec<ManifestEntry> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| ManifestEntry {
            sample_id: s.id.clone(),
            applied_angle_deg: sample_angle(dist, i as u64),
            draw_index: i as u64,
            seed: dist.seed,
        })
        .collect();
    let manifest = PerturbManifest {
        center_crop,
        entries,
    };
    let perturbed = apply_manifest(samples, &manifest)?;
    Ok((perturbed, manifest))
}

/// Re-applies recorded angles; reproduces [`perturb_dataset`] output exactly.
pub fn apply_manifest(
    samples: &[DriveSample],
    manifest: &PerturbManifest,
) -> Result<Vec<DriveSample>, AugmentError> {
    if manifest.entries.len() != samples.len() {
        return Err(AugmentError::ManifestLength {
            manifest: manifest.entries.len(),
            samples: samples.len(),
        });
    }
    for (i, (s, e)) in samples.iter().zip(&manifest.entries).enumerate() {
        if s.id != e.sample_id {
            return Err(AugmentError::ManifestId {
                index: i,
                expected: e.sample_id.clone(),
                found: s.id.clone(),
            });
        }
    }
    Ok(samples
        .par_iter()
        .zip(manifest.entries.par_iter())
        .map(|(s, e)| perturb_one(s, e.applied_angle_deg, manifest.center_crop))
        .collect())
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`.
pub fn psnr(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Copies the central `fraction` of the image in each dimension.
pub fn center_crop(image: &Image, fraction: f64) -> Image {
    let cw = ((image.width as f64 * fraction).round() as usize).max(1);
    let ch = ((image.height as f64 * fraction).round() as usize).max(1);
    let (x0, y0) = ((image.width - cw) / 2, (image.height - ch) / 2);
    let mut out = Image::zeros(cw, ch, image.channels);
    for y in 0..ch {
        for x in 0..cw {
            for c in 0..image.channels {
                out.set(x, y, c, image.get(x0 + x, y0 + y, c));
            }
        }
    }
    out
}
