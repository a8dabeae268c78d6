//! Synthetic dash-cam road frames with analytically known steering labels.
//!
//! A frame shows a sky gradient above a horizon and a two-line lane below
//! it, drawn in perspective: the lane narrows toward the horizon, bends with
//! `curvature` in the far field and shifts with `lane_offset` near the car.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::DriveSample;
use crate::raster::Image;
use crate::rng::{self, Stream};

pub const MIN_SIZE: usize = 32;
pub const DEFAULT_SIZE: usize = 64;

const HORIZON: f64 = 0.38;
const BEND: f64 = 0.30;
const SHIFT: f64 = 0.22;
const TEXTURE_AMPLITUDE: f32 = 0.06;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("image size {width}x{height} is below the {MIN_SIZE}x{MIN_SIZE} minimum")]
    TooSmall { width: usize, height: usize },
    #[error("scene parameter {name} = {value} is outside [-1, 1]")]
    Parameter { name: &'static str, value: f64 },
    #[error("dataset size must be at least 1")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadScene {
    pub curvature: f64,
    pub lane_offset: f64,
    pub texture_seed: u64,
}

impl RoadScene {
    pub fn new(curvature: f64, lane_offset: f64, texture_seed: u64) -> Result<Self, SynthError> {
        for (name, value) in [("curvature", curvature), ("lane_offset", lane_offset)] {
            if !(value.is_finite() && value.abs() <= 1.0) {
                return Err(SynthError::Parameter { name, value });
            }
        }
        Ok(Self {
            curvature,
            lane_offset,
            texture_seed,
        })
    }

    /// `clamp(0.8 * curvature + 0.2 * lane_offset, -1, 1)`.
    pub fn steering(&self) -> f64 {
        (0.8 * self.curvature + 0.2 * self.lane_offset).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    pub texture: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: DEFAULT_SIZE,
            height: DEFAULT_SIZE,
            texture: true,
        }
    }
}

#[inline]
fn stripe(distance: f64, half_width: f64) -> f64 {
    (1.0 - distance.abs() / half_width).max(0.0)
}

/// Renders a single-channel frame. Deterministic in `(scene, options)`.
pub fn render_road(scene: &RoadScene, options: &RenderOptions) -> Result<Image, SynthError> {
    let (w, h) = (options.width, options.height);
    if w < MIN_SIZE || h < MIN_SIZE {
        return Err(SynthError::TooSmall {
            width: w,
            height: h,
        });
    }
    let (wf, hf) = (w as f64, h as f64);
    let horizon = HORIZON * hf;
    let noise = Stream::new(scene.texture_seed, "synthroad/texture");
    let mut img = Image::zeros(w, h, 1);

    for y in 0..h {
        let v = y as f64 + 0.5;
        // lane geometry for this row; t runs from 0 at the horizon to 1 at the bottom
        let t = ((v - horizon) / (hf - horizon)).max(0.0);
        let far = (1.0 - t) * (1.0 - t);
        let shift = wf * (SHIFT * scene.lane_offset * t + BEND * scene.curvature * far);
        let half_lane = wf * (0.02 + 0.40 * t);
        let line_half_width = 0.6 + 1.6 * t;

        for x in 0..w {
            // centred coordinate keeps left/right mirror images bit-exact
            let u = (x as f64 + 0.5) - wf / 2.0;
            let value = if v < horizon {
                0.85 - 0.25 * v / horizon
            } else {
                let rel = u - shift;
                let base = if rel.abs() < 1.2 * half_lane { 0.42 } else { 0.22 };
                let line = stripe(rel - half_lane, line_half_width)
                    .max(stripe(rel + half_lane, line_half_width));
                base + (0.97 - base) * line
            };
            let mut value = value as f32;
            if options.texture && v >= horizon {
                let n = noise.uniform((y * w + x) as u64) as f32;
                value += TEXTURE_AMPLITUDE * (2.0 * n - 1.0);
            }
            img.set(x, y, 0, value.clamp(0.0, 1.0));
        }
    }
    Ok(img)
}

/// Builds a labelled sample for a given scene.
pub fn sample_for_scene(
    id: String,
    scene: &RoadScene,
    options: &RenderOptions,
) -> Result<DriveSample, SynthError> {
    Ok(DriveSample {
        id,
        image: render_road(scene, options)?,
        steering: scene.steering(),
    })
}

/// The scene used for index `i` of a dataset generated with `seed`.
pub fn scene_for_index(seed: u64, i: u64) -> RoadScene {
    let s = Stream::new(seed, "synthroad/scene");
    RoadScene {
        curvature: s.uniform_in(3 * i, -1.0, 1.0),
        lane_offset: s.uniform_in(3 * i + 1, -1.0, 1.0),
        texture_seed: s.bits(3 * i + 2),
    }
}

/// `n` labelled frames with ids `000000, 000001, ...`.
pub fn gen_dataset(
    n: usize,
    seed: u64,
    options: &RenderOptions,
) -> Result<Vec<DriveSample>, SynthError> {
    if n == 0 {
        return Err(SynthError::Empty);
    }
    if options.width < MIN_SIZE || options.height < MIN_SIZE {
        return Err(SynthError::TooSmall {
            width: options.width,
            height: options.height,
        });
    }
    (0..n)
        .into_par_iter()
        .map(|i| sample_for_scene(format!("{i:06}"), &scene_for_index(seed, i as u64), options))
        .collect()
}

/// Derives the generation seed for a named split from the run seed.
pub fn split_seed(seed: u64, split: &str) -> u64 {
    rng::derive_seed(seed, &format!("synth/{split}"))
}

/// Left-right mirror of an image.
pub fn mirror(image: &Image) -> Image {
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..image.channels {
                out.set(x, y, c, image.get(image.width - 1 - x, y, c));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(w: usize) -> RenderOptions {
        RenderOptions {
            width: w,
            height: w,
            texture: false,
        }
    }

    #[test]
    fn straight_centred_road_is_mirror_symmetric() {
        let img = render_road(&RoadScene::new(0.0, 0.0, 5).unwrap(), &plain(64)).unwrap();
        assert_eq!(mirror(&img), img);
    }

    #[test]
    fn opposite_curvature_gives_mirror_images() {
        for (c, o) in [(0.5, 0.0), (0.3, -0.7), (-1.0, 1.0)] {
            let a = render_road(&RoadScene::new(c, o, 1).unwrap(), &plain(48)).unwrap();
            let b = render_road(&RoadScene::new(-c, -o, 1).unwrap(), &plain(48)).unwrap();
            assert_eq!(mirror(&a), b);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = RoadScene::new(0.2, -0.1, 99).unwrap();
        let o = RenderOptions::default();
        assert_eq!(render_road(&s, &o).unwrap(), render_road(&s, &o).unwrap());
    }

    #[test]
    fn too_small_is_rejected() {
        let s = RoadScene::new(0.0, 0.0, 0).unwrap();
        assert_eq!(
            render_road(&s, &plain(16)),
            Err(SynthError::TooSmall { width: 16, height: 16 })
        );
        assert!(RoadScene::new(1.5, 0.0, 0).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(RoadScene::new(0.0, 0.0, 0).unwrap().steering(), 0.0);
        assert_eq!(RoadScene::new(1.0, 1.0, 0).unwrap().steering(), 1.0);
        assert_eq!(RoadScene::new(-1.0, -1.0, 0).unwrap().steering(), -1.0);
        let s = sample_for_scene("x".into(), &RoadScene::new(0.0, 0.0, 3).unwrap(), &RenderOptions::default())
            .unwrap();
        assert_eq!(s.steering, 0.0);
    }

    #[test]
    fn dataset_labels_in_range_and_reproducible() {
        let o = RenderOptions {
            width: 32,
            height: 32,
            texture: true,
        };
        let d = gen_dataset(1000, 7, &o).unwrap();
        assert_eq!(d.len(), 1000);
        assert_eq!(d[17].id, "000017");
        assert!(d.iter().all(|s| s.steering.abs() <= 1.0));
        assert_eq!(gen_dataset(20, 7, &o).unwrap(), d[..20].to_vec());
        assert_eq!(gen_dataset(0, 7, &o), Err(SynthError::Empty));
    }
}
