//! Synthetic pothole scans with known geometry, for exercising the
//! reconstruction and statistics stages without the real scan corpus.

use std::fs;
use std::path::Path;

use crate::colormap::jet_encode_u8;
use crate::heightfield::{HeightfieldError, PotholeSample};
use crate::raster::{save_gray8, save_rgb8};
use crate::rng::Stream;

/// A paraboloid crater: depth `peak * (1 - r^2 / radius^2)` inside the rim,
/// zero outside. Coordinates are in pixels, measured to pixel centres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crater {
    pub center: (f64, f64),
    pub radius: f64,
    pub peak_mm: f64,
}

impl Crater {
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        let dx = x as f64 + 0.5 - self.center.0;
        let dy = y as f64 + 0.5 - self.center.1;
        let r2 = (dx * dx + dy * dy) / (self.radius * self.radius);
        if r2 < 1.0 {
            self.peak_mm * (1.0 - r2)
        } else {
            0.0
        }
    }

    pub fn inside(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.center.0;
        let dy = y as f64 + 0.5 - self.center.1;
        dx * dx + dy * dy < self.radius * self.radius
    }

    /// Renders the scan triplet. The heatmap encodes `depth / depth_scale`
    /// on the jet scale (clamped to 1); the label marks the crater interior.
    pub fn render(&self, id: &str, width: usize, height: usize, depth_scale: f64) -> PotholeSample {
        let mut rgb = Vec::with_capacity(width * height * 3);
        let mut heatmap = Vec::with_capacity(width * height * 3);
        let mut mask = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let d = self.depth_at(x, y);
                let v = (d / depth_scale).clamp(0.0, 1.0);
                heatmap.extend_from_slice(&jet_encode_u8(v).expect("clamped to [0, 1]"));
                let shade = (110.0 - 60.0 * v) as u8;
                rgb.extend_from_slice(&[shade, shade, shade.saturating_add(5)]);
                mask.push(self.inside(x, y));
            }
        }
        PotholeSample {
            id: id.to_string(),
            width,
            height,
            rgb,
            heatmap,
            mask,
        }
    }
}

/// Writes a sample into the `rgb/ tdisp/ label/` layout under `root`.
pub fn write_sample(root: &Path, sample: &PotholeSample) -> Result<(), HeightfieldError> {
    let (w, h) = (sample.width as u32, sample.height as u32);
    let file = format!("{}.png", sample.id);
    let to_err = |e: crate::raster::RasterError| HeightfieldError::Undecodable(e.to_string());
    for sub in ["rgb", "tdisp", "label"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|source| HeightfieldError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    save_rgb8(&root.join("rgb").join(&file), w, h, sample.rgb.clone()).map_err(to_err)?;
    save_rgb8(&root.join("tdisp").join(&file), w, h, sample.heatmap.clone()).map_err(to_err)?;
    let label = sample.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    save_gray8(&root.join("label").join(&file), w, h, label).map_err(to_err)?;
    Ok(())
}

/// Seeded depths shaped like a pothole survey: a normal body with mean
/// 61.7 mm and spread 10.2 mm, clamped to `[45, 110]` mm.
pub fn survey_depths(n: usize, seed: u64) -> Vec<f64> {
    let s = Stream::new(seed, "craters/depths");
    (0..n as u64)
        .map(|i| (61.7 + 10.2 * s.normal(i)).clamp(45.0, 110.0))
        .collect()
}

/// Seeded crater set: centred-ish paraboloids with survey-like peak depths.
pub fn random_craters(n: usize, size: usize, seed: u64) -> Vec<Crater> {
    let s = Stream::new(seed, "craters/shape");
    let peaks = survey_depths(n, seed);
    (0..n)
        .map(|i| {
            let k = 3 * i as u64;
            let half = size as f64 / 2.0;
            Crater {
                center: (
                    half + s.uniform_in(k, -0.15, 0.15) * size as f64,
                    half + s.uniform_in(k + 1, -0.15, 0.15) * size as f64,
                ),
                radius: s.uniform_in(k + 2, 0.2, 0.33) * size as f64,
                peak_mm: peaks[i],
            }
        })
        .collect()
}
