//! Pothole-induced camera roll: from scan heatmaps to a steering-robust
//! denoising autoencoder.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! - [`colormap`] and [`heightfield`] decode jet heatmaps into metric depth
//!   fields and grid meshes.
//! - [`gradstats`] reduces each field to chunked slopes and a characteristic
//!   depth, then summarizes the dataset.
//! - [`geometry`] turns depths into dash-cam roll angles for a rigid car.
//! - [`synthroad`] and [`augment`] produce driving images and roll-perturbed
//!   copies of them.
//! - [`neural`] trains a steering regressor and a denoiser that restores its
//!   predictions on perturbed input.

pub mod augment;
pub mod colormap;
pub mod craters;
pub mod dataset;
pub mod geometry;
pub mod gradstats;
pub mod heightfield;
pub mod neural;
pub mod raster;
pub mod rng;
pub mod synthroad;
