//! The jet color scale and its inverse.
//!
//! Encoding uses the classic piecewise-linear definition
//!
//! ```text
//! r = clamp(min(4x - 1.5, -4x + 4.5), 0, 1)
//! g = clamp(min(4x - 0.5, -4x + 3.5), 0, 1)
//! b = clamp(min(4x + 0.5, -4x + 2.5), 0, 1)
//! ```
//!
//! Decoding projects an arbitrary RGB triple onto the nearest point of that
//! curve: a coarse search over a 1024-point table, then an exact projection
//! onto the linear pieces of the curve between the winner's neighbours.
//! Triples that sit farther than [`OFF_CURVE_DISTANCE`] from the curve still
//! decode, but are flagged.

use std::sync::OnceLock;

use thiserror::Error;

/// Number of samples in the coarse lookup table.
pub const TABLE_SIZE: usize = 1024;

/// RGB distance above which a decoded pixel counts as off-curve.
pub const OFF_CURVE_DISTANCE: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum ColormapError {
    #[error("jet input {0} is outside [0, 1]")]
    Domain(f64),
}

pub type Rgb = [f64; 3];

/// A value on the jet scale together with its color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetSample {
    pub value: f64,
    pub rgb: Rgb,
}

impl JetSample {
    pub fn new(value: f64) -> Result<Self, ColormapError> {
        Ok(Self {
            value,
            rgb: jet_encode(value)?,
        })
    }
}

#[inline]
fn ramp(x: f64, up: f64, down: f64) -> f64 {
    (4.0 * x + up).min(-4.0 * x + down).clamp(0.0, 1.0)
}

#[inline]
fn encode_unchecked(x: f64) -> Rgb {
    [ramp(x, -1.5, 4.5), ramp(x, -0.5, 3.5), ramp(x, 0.5, 2.5)]
}

/// Maps a normalized scalar to its jet color.
pub fn jet_encode(x: f64) -> Result<Rgb, ColormapError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(ColormapError::Domain(x));
    }
    Ok(encode_unchecked(x))
}

/// Maps a normalized scalar to an 8-bit jet color (round to nearest).
pub fn jet_encode_u8(x: f64) -> Result<[u8; 3], ColormapError> {
    let c = jet_encode(x)?;
    Ok(c.map(|v| (v * 255.0).round() as u8))
}

/// Result of projecting a color onto the jet curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub value: f64,
    /// Euclidean RGB distance from the input to the projected curve point.
    pub distance: f64,
}

impl Decoded {
    pub fn off_curve(&self) -> bool {
        self.distance > OFF_CURVE_DISTANCE
    }
}

/// Breakpoints of the piecewise-linear curve.
const KNOTS: [f64; 6] = [0.0, 0.125, 0.375, 0.625, 0.875, 1.0];

struct JetTable {
    colors: Vec<Rgb>,
}

fn table() -> &'static JetTable {
    static TABLE: OnceLock<JetTable> = OnceLock::new();
    TABLE.get_or_init(|| JetTable {
        colors: (0..TABLE_SIZE)
            .map(|i| encode_unchecked(i as f64 / (TABLE_SIZE - 1) as f64))
            .collect(),
    })
}

#[inline]
fn dist2(a: &Rgb, b: &Rgb) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Closest point on segment `p0 -> p1`, as (parameter in [0,1], squared distance).
fn project_segment(p: &Rgb, p0: &Rgb, p1: &Rgb) -> (f64, f64) {
    let d = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if len2 == 0.0 {
        return (0.0, dist2(p, p0));
    }
    let t = (((p[0] - p0[0]) * d[0] + (p[1] - p0[1]) * d[1] + (p[2] - p0[2]) * d[2]) / len2)
        .clamp(0.0, 1.0);
    let q = [p0[0] + t * d[0], p0[1] + t * d[1], p0[2] + t * d[2]];
    (t, dist2(p, &q))
}

/// Projects `rgb` onto the jet curve and reports the residual distance.
pub fn jet_decode_detailed(rgb: Rgb) -> Decoded {
    let colors = &table().colors;
    let step = 1.0 / (TABLE_SIZE - 1) as f64;

    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in colors.iter().enumerate() {
        let d = dist2(&rgb, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }

    // refine on the exact curve pieces spanning the winner's neighbours
    let lo = best.saturating_sub(1) as f64 * step;
    let hi = ((best + 1).min(TABLE_SIZE - 1)) as f64 * step;
    let mut value = best as f64 * step;
    let mut d2 = best_d;
    for w in KNOTS.windows(2) {
        let (a, b) = (w[0].max(lo), w[1].min(hi));
        if a >= b {
            continue;
        }
        let (t, d) = project_segment(&rgb, &encode_unchecked(a), &encode_unchecked(b));
        if d < d2 {
            d2 = d;
            value = a + t * (b - a);
        }
    }
    Decoded {
        value: value.clamp(0.0, 1.0),
        distance: d2.sqrt(),
    }
}

/// Inverse of [`jet_encode`]; total over all RGB triples.
pub fn jet_decode(rgb: Rgb) -> f64 {
    jet_decode_detailed(rgb).value
}

/// Decodes an 8-bit pixel (channels normalized by 255).
pub fn jet_decode_u8(px: [u8; 3]) -> Decoded {
    jet_decode_detailed(px.map(|c| f64::from(c) / 255.0))
}
