//! On-disk driving datasets: `images/<id>.png` plus `index.csv` (`id,steering`),
//! optionally with a `manifest.json` describing the applied perturbation.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{DriveSample, PerturbManifest};
use crate::raster::{Image, RasterError};

pub const INDEX_FILE: &str = "index.csv";
pub const IMAGES_DIR: &str = "images";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad index {path}: {reason}")]
    Index { path: String, reason: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("steering label {steering} for '{id}' is outside [-1, 1]")]
    Label { id: String, steering: f64 },
    #[error("image '{id}' is {got:?}, dataset shape is {expected:?}")]
    Shape {
        id: String,
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
    #[error("dataset at {0} is empty")]
    Empty(String),
    #[error("bad manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    id: String,
    steering: f64,
}

/// Writes samples in the standard layout, creating directories as needed.
pub fn write_dataset(root: &Path, samples: &[DriveSample]) -> Result<(), DatasetError> {
    let images = root.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    samples
        .par_iter()
        .try_for_each(|s| s.image.save(&images.join(format!("{}.png", s.id))))?;

    let index = root.join(INDEX_FILE);
    let mut text = String::from("id,steering\n");
    for s in samples {
        text.push_str(&format!("{},{}\n", s.id, s.steering));
    }
    fs::write(&index, text).map_err(io_err(&index))
}

/// Reads `index.csv` and every referenced image; all images must share one shape.
pub fn read_dataset(root: &Path) -> Result<Vec<DriveSample>, DatasetError> {
    let index = root.join(INDEX_FILE);
    let mut reader = csv::Reader::from_path(&index).map_err(|e| DatasetError::Index {
        path: index.display().to_string(),
        reason: e.to_string(),
    })?;
    let rows: Vec<IndexRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| DatasetError::Index {
            path: index.display().to_string(),
            reason: e.to_string(),
        })?;
    if rows.is_empty() {
        return Err(DatasetError::Empty(root.display().to_string()));
    }
    let samples: Vec<DriveSample> = rows
        .into_par_iter()
        .map(|row| {
            if !(row.steering.is_finite() && row.steering.abs() <= 1.0) {
                return Err(DatasetError::Label {
                    id: row.id,
                    steering: row.steering,
                });
            }
            let image = Image::load(&root.join(IMAGES_DIR).join(format!("{}.png", row.id)))?;
            Ok(DriveSample {
                id: row.id,
                image,
                steering: row.steering,
            })
        })
        .collect::<Result<_, _>>()?;
    let first = &samples[0].image;
    let expected = (first.width, first.height, first.channels);
    for s in &samples {
        let got = (s.image.width, s.image.height, s.image.channels);
        if got != expected {
            return Err(DatasetError::Shape {
                id: s.id.clone(),
                got,
                expected,
            });
        }
    }
    Ok(samples)
}

pub fn write_manifest(root: &Path, manifest: &PerturbManifest) -> Result<(), DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn read_manifest(root: &Path) -> Result<PerturbManifest, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
