//! Rigid-car roll geometry: how far the dash cam tilts when one wheel drops
//! into a pothole of depth `b` on an axle of width `a`.
//!
//! Two angles are exposed. `theta1 = atan(b / a)` is the tilt of the axle
//! line itself; `theta2 = atan(2b / a)` is the camera roll used to perturb
//! images. Only `theta2` feeds the perturbation distribution.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradstats::PotholeScalar;
use crate::rng::{self, Stream};

pub const DEFAULT_AXLE_WIDTH_MM: f64 = 1780.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("axle width must be positive and finite, got {0}")]
    AxleWidth(f64),
    #[error("pothole depth must be finite and non-negative, got {0}")]
    Depth(f64),
    #[error("roll angle must lie in [0, 90) degrees, got {0}")]
    Angle(f64),
    #[error("cannot build a distribution from zero potholes")]
    Empty,
    #[error("malformed angles file {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarGeometry {
    /// Distance between wheel centres, mm.
    pub axle_width_a: f64,
}

impl Default for CarGeometry {
    fn default() -> Self {
        Self {
            axle_width_a: DEFAULT_AXLE_WIDTH_MM,
        }
    }
}

impl CarGeometry {
    pub fn new(axle_width_a: f64) -> Result<Self, GeometryError> {
        if !(axle_width_a.is_finite() && axle_width_a > 0.0) {
            return Err(GeometryError::AxleWidth(axle_width_a));
        }
        Ok(Self { axle_width_a })
    }
}

/// Axle tilt in degrees.
pub fn theta1(b: f64, geometry: &CarGeometry) -> f64 {
    (b / geometry.axle_width_a).atan().to_degrees()
}

/// Camera roll in degrees.
pub fn theta2(b: f64, geometry: &CarGeometry) -> f64 {
    ((2.0 * b) / geometry.axle_width_a).atan().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignPolicy {
    /// Either wheel may drop: the sign is a fair coin per draw.
    #[default]
    SymmetricRandom,
    AlwaysPositive,
}

impl std::str::FromStr for SignPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric-random" => Ok(Self::SymmetricRandom),
            "always-positive" => Ok(Self::AlwaysPositive),
            other => Err(format!(
                "unknown sign policy '{other}' (symmetric-random | always-positive)"
            )),
        }
    }
}

/// Empirical roll magnitudes plus a seeded, stateless sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbDistribution {
    /// Degrees, each in `[0, 90)`.
    pub angles: Vec<f64>,
    pub sign_policy: SignPolicy,
    pub seed: u64,
}

impl PerturbDistribution {
    pub fn new(angles: Vec<f64>, sign_policy: SignPolicy, seed: u64) -> Result<Self, GeometryError> {
        if angles.is_empty() {
            return Err(GeometryError::Empty);
        }
        if let Some(bad) = angles.iter().find(|a| !(a.is_finite() && (0.0..90.0).contains(*a))) {
            return Err(GeometryError::Angle(*bad));
        }
        Ok(Self {
            angles,
            sign_policy,
            seed,
        })
    }
}

/// Maps each characteristic depth to its camera roll, preserving input order.
pub fn build_distribution(
    scalars: &[PotholeScalar],
    geometry: &CarGeometry,
    sign_policy: SignPolicy,
    seed: u64,
) -> Result<PerturbDistribution, GeometryError> {
    if scalars.is_empty() {
        return Err(GeometryError::Empty);
    }
    let angles = scalars
        .iter()
        .map(|s| {
            let b = s.characteristic_depth;
            if !(b.is_finite() && b >= 0.0) {
                return Err(GeometryError::Depth(b));
            }
            Ok(theta2(b, geometry))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PerturbDistribution {
        angles,
        sign_policy,
        seed,
    })
}

/// Signed roll for draw `draw_index`, a pure function of `(seed, draw_index)`.
///
/// The magnitude index and the sign come from two independent hash streams.
pub fn sample_angle(dist: &PerturbDistribution, draw_index: u64) -> f64 {
    let pick = Stream::new(dist.seed, "perturb/magnitude").bits(draw_index);
    let magnitude = dist.angles[rng::below(pick, dist.angles.len())];
    match dist.sign_policy {
        SignPolicy::AlwaysPositive => magnitude,
        SignPolicy::SymmetricRandom => {
            let coin = Stream::new(dist.seed, "perturb/sign").bits(draw_index);
            if coin >> 63 == 1 {
                -magnitude
            } else {
                magnitude
            }
        }
    }
}

/// One row of `angles.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleRow {
    pub pothole_id: String,
    pub depth_mm: f64,
    pub theta1_deg: f64,
    pub theta2_deg: f64,
}

pub const ANGLES_HEADER: &str = "pothole_id,depth_mm,theta1_deg,theta2_deg";

pub fn angle_rows(scalars: &[PotholeScalar], geometry: &CarGeometry) -> Vec<AngleRow> {
    scalars
        .iter()
        .map(|s| AngleRow {
            pothole_id: s.id.clone(),
            depth_mm: s.characteristic_depth,
            theta1_deg: theta1(s.characteristic_depth, geometry),
            theta2_deg: theta2(s.characteristic_depth, geometry),
        })
        .collect()
}

pub fn write_angles_csv(path: &Path, rows: &[AngleRow]) -> Result<(), GeometryError> {
    let mut out = String::new();
    writeln!(out, "{ANGLES_HEADER}").unwrap();
    for r in rows {
        // full round-trip precision: downstream stages rebuild the distribution from this file
        writeln!(
            out,
            "{},{},{},{}",
            r.pothole_id, r.depth_mm, r.theta1_deg, r.theta2_deg
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_angles_csv(path: &Path) -> Result<Vec<AngleRow>, GeometryError> {
    let text = fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let err = |reason: String| GeometryError::Parse {
        path: path.display().to_string(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(ANGLES_HEADER) {
        return Err(err("missing header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(err(format!("line {}: expected 4 fields", i + 2)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("line {}: {e}", i + 2)));
            Ok(AngleRow {
                pothole_id: f[0].to_string(),
                depth_mm: num(f[1])?,
                theta1_deg: num(f[2])?,
                theta2_deg: num(f[3])?,
            })
        })
        .collect()
}
