//! Depth slopes, chunked gradient grids and dataset-level depth statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heightfield::DepthField;

pub const DEFAULT_CHUNKS: usize = 10;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("field is {width}x{height}; gradients need at least 2 pixels per axis")]
    Degenerate { width: usize, height: usize },
    #[error("{width}x{height} field is not divisible into {rows}x{cols} chunks")]
    Indivisible {
        width: usize,
        height: usize,
        rows: usize,
        cols: usize,
    },
    #[error("pothole {0} has an empty label mask")]
    EmptyMask(String),
    #[error("no values to summarize")]
    Empty,
    #[error("non-finite value {0} in statistics input")]
    NonFinite(f64),
    #[error("malformed stats file {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-pixel slopes in mm per mm, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGradients {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

/// Central differences inside, one-sided differences on the border, both
/// divided by the pixel pitch.
pub fn pixel_gradients(field: &DepthField) -> Result<PixelGradients, StatsError> {
    let (w, h) = (field.width, field.height);
    if w < 2 || h < 2 {
        return Err(StatsError::Degenerate {
            width: w,
            height: h,
        });
    }
    let pitch = field.pixel_pitch;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let dx = if x == 0 {
                field.at(1, y) - field.at(0, y)
            } else if x == w - 1 {
                field.at(w - 1, y) - field.at(w - 2, y)
            } else {
                (field.at(x + 1, y) - field.at(x - 1, y)) / 2.0
            };
            let dy = if y == 0 {
                field.at(x, 1) - field.at(x, 0)
            } else if y == h - 1 {
                field.at(x, h - 1) - field.at(x, h - 2)
            } else {
                (field.at(x, y + 1) - field.at(x, y - 1)) / 2.0
            };
            gx[y * w + x] = dx / pitch;
            gy[y * w + x] = dy / pitch;
        }
    }
    Ok(PixelGradients {
        width: w,
        height: h,
        gx,
        gy,
    })
}

/// Chunk-averaged signed slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols`.
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    /// Mean over chunks of the magnitude of the chunk's mean slope.
    pub mean_gradient: f64,
}

impl GradientGrid {
    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        let i = row * self.cols + col;
        (self.gx[i], self.gy[i])
    }
}

/// Splits the gradient grid into `rows x cols` equal chunks and takes the
/// signed mean of each component within every chunk. Sums run in row-major
/// order inside each chunk.
pub fn chunk_average(
    grads: &PixelGradients,
    rows: usize,
    cols: usize,
) -> Result<GradientGrid, StatsError> {
    let (w, h) = (grads.width, grads.height);
    if rows == 0 || cols == 0 || w % cols != 0 || h % rows != 0 {
        return Err(StatsError::Indivisible {
            width: w,
            height: h,
            rows,
            cols,
        });
    }
    let (cw, ch) = (w / cols, h / rows);
    let count = (cw * ch) as f64;
    let mut gx = Vec::with_capacity(rows * cols);
    let mut gy = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (mut sx, mut sy) = (0.0, 0.0);
            for y in r * ch..(r + 1) * ch {
                for x in c * cw..(c + 1) * cw {
                    sx += grads.gx[y * w + x];
                    sy += grads.gy[y * w + x];
                }
            }
            gx.push(sx / count);
            gy.push(sy / count);
        }
    }
    let mean_gradient = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| a.hypot(*b))
        .sum::<f64>()
        / (rows * cols) as f64;
    Ok(GradientGrid {
        rows,
        cols,
        gx,
        gy,
        mean_gradient,
    })
}

/// How a masked depth region collapses to one characteristic depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    #[default]
    Max,
    Mean,
    P95,
}

impl std::str::FromStr for Reducer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            "p95" => Ok(Self::P95),
            other => Err(format!("unknown reducer '{other}' (max | mean | p95)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotholeScalar {
    pub id: String,
    /// mm
    pub characteristic_depth: f64,
    pub mean_gradient: f64,
}

pub fn pothole_scalar(
    id: &str,
    field: &DepthField,
    grid: &GradientGrid,
    reducer: Reducer,
) -> Result<PotholeScalar, StatsError> {
    let masked: Vec<f64> = field
        .depths
        .iter()
        .zip(&field.mask)
        .filter_map(|(d, m)| m.then_some(*d))
        .collect();
    if masked.is_empty() {
        return Err(StatsError::EmptyMask(id.to_string()));
    }
    let characteristic_depth = match reducer {
        Reducer::Max => masked.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Reducer::Mean => masked.iter().sum::<f64>() / masked.len() as f64,
        Reducer::P95 => {
            let mut sorted = masked;
            sorted.sort_by(f64::total_cmp);
            quantile_sorted(&sorted, 0.95)
        }
    };
    Ok(PotholeScalar {
        id: id.to_string(),
        characteristic_depth,
        mean_gradient: grid.mean_gradient,
    })
}

/// Linear interpolation between order statistics at rank `(n - 1) * q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let rank = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Describe-style summary of per-pothole depths, all in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotholeStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl PotholeStats {
    /// The seven summary rows, labelled as in a describe-style table.
    pub fn rows(&self) -> [(&'static str, f64); 7] {
        [
            ("mean", self.mean),
            ("std", self.std),
            ("min", self.min),
            ("25%", self.q25),
            ("50%", self.median),
            ("75%", self.q75),
            ("max", self.max),
        ]
    }
}

pub fn aggregate_stats(values: &[f64]) -> Result<PotholeStats, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(*bad));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(PotholeStats {
        count: n,
        // the rounded mean can fall a ulp outside [min, max] for equal values
        mean: mean.clamp(sorted[0], sorted[n - 1]),
        std,
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
    })
}

pub const STATS_HEADER: &str = "id,characteristic_depth_mm,mean_gradient";
pub const SUMMARY_HEADER: &str = "statistic,value_mm";

/// Renders `stats.csv`: one row per pothole, a blank line, then the summary block.
pub fn stats_csv(scalars: &[PotholeScalar], stats: &PotholeStats) -> String {
    let mut out = String::new();
    writeln!(out, "{STATS_HEADER}").unwrap();
    for s in scalars {
        writeln!(
            out,
            "{},{:.6},{:.9}",
            s.id, s.characteristic_depth, s.mean_gradient
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{SUMMARY_HEADER}").unwrap();
    writeln!(out, "count,{}", stats.count).unwrap();
    for (name, v) in stats.rows() {
        writeln!(out, "{name},{v:.6}").unwrap();
    }
    out
}

pub fn write_stats_csv(
    path: &Path,
    scalars: &[PotholeScalar],
    stats: &PotholeStats,
) -> Result<(), StatsError> {
    fs::write(path, stats_csv(scalars, stats)).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads the per-pothole block of a `stats.csv`.
pub fn read_stats_csv(path: &Path) -> Result<Vec<PotholeScalar>, StatsError> {
    let text = fs::read_to_string(path).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parse_err = |reason: String| StatsError::Parse {
        path: path.display().to_string(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(STATS_HEADER) {
        return Err(parse_err("missing header".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            break;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("line {}: expected 3 fields", i + 2)));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(format!("line {}: {e}", i + 2)))
        };
        out.push(PotholeScalar {
            id: fields[0].to_string(),
            characteristic_depth: num(fields[1])?,
            mean_gradient: num(fields[2])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn field(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> DepthField {
        DepthField::from_fn(w, h, 1.0, f).unwrap()
    }

    #[test]
    fn constant_field_has_zero_slope() {
        let g = pixel_gradients(&field(6, 5, |_, _| 7.0)).unwrap();
        assert!(g.gx.iter().chain(&g.gy).all(|&v| v == 0.0));
    }

    #[test]
    fn plane_slope() {
        let g = pixel_gradients(&field(8, 8, |x, _| 0.5 * x as f64)).unwrap();
        assert!(g.gx.iter().all(|&v| v == 0.5));
        assert!(g.gy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pitch_divides_slopes() {
        let f = DepthField::from_fn(4, 4, 2.0, |x, _| x as f64).unwrap();
        let g = pixel_gradients(&f).unwrap();
        assert!(g.gx.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn product_field_interior_gx_is_y() {
        // z = x*y, so central differences give gx(x, y) = y exactly
        let g = pixel_gradients(&field(4, 4, |x, y| (x * y) as f64)).unwrap();
        for y in 1..3 {
            for x in 1..3 {
                assert_eq!(g.gx[y * 4 + x], y as f64);
                assert_eq!(g.gy[y * 4 + x], x as f64);
            }
        }
    }

    #[test]
    fn degenerate_field_is_rejected() {
        assert!(matches!(
            pixel_gradients(&field(1, 4, |_, _| 0.0)),
            Err(StatsError::Degenerate { .. })
        ));
    }

    #[test]
    fn chunking_400_gives_40px_chunks_and_plane_means() {
        let g = pixel_gradients(&field(400, 400, |x, _| 0.5 * x as f64)).unwrap();
        let grid = chunk_average(&g, 10, 10).unwrap();
        assert_eq!((grid.rows, grid.cols, grid.gx.len()), (10, 10, 100));
        assert!(grid.gx.iter().all(|&v| v == 0.5));
        assert!(grid.gy.iter().all(|&v| v == 0.0));
        assert_eq!(grid.mean_gradient, 0.5);
    }

    #[test]
    fn antisymmetric_chunk_has_zero_mean() {
        // a bump symmetric about the chunk centre has antisymmetric slopes
        let g = pixel_gradients(&field(20, 20, |x, y| {
            let (dx, dy) = (x as f64 - 9.5, y as f64 - 9.5);
            50.0 * (-(dx * dx + dy * dy) / 20.0).exp()
        }))
        .unwrap();
        let grid = chunk_average(&g, 1, 1).unwrap();
        assert_abs_diff_eq!(grid.gx[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grid.gy[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn indivisible_dimensions_are_rejected() {
        let g = pixel_gradients(&field(15, 20, |_, _| 0.0)).unwrap();
        assert!(matches!(
            chunk_average(&g, 10, 10),
            Err(StatsError::Indivisible { .. })
        ));
    }

    #[test]
    fn reducers() {
        let mut f = field(2, 2, |x, y| [10.0, 20.0, 30.0, 40.0][y * 2 + x]);
        let grid = chunk_average(&pixel_gradients(&f).unwrap(), 1, 1).unwrap();
        assert_eq!(pothole_scalar("a", &f, &grid, Reducer::Mean).unwrap().characteristic_depth, 25.0);
        assert_eq!(pothole_scalar("a", &f, &grid, Reducer::Max).unwrap().characteristic_depth, 40.0);
        f.mask = vec![true, true, true, false];
        assert_eq!(pothole_scalar("a", &f, &grid, Reducer::Max).unwrap().characteristic_depth, 30.0);
        f.mask = vec![false; 4];
        assert!(matches!(
            pothole_scalar("a", &f, &grid, Reducer::Max),
            Err(StatsError::EmptyMask(_))
        ));
    }

    #[test]
    fn describe_one_to_five() {
        let s = aggregate_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.count, 5);
        assert_eq!(s.mean, 3.0);
        assert_abs_diff_eq!(s.std, 1.581139, epsilon = 1e-6);
        assert_eq!((s.min, s.q25, s.median, s.q75, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
    }

    #[test]
    fn describe_constant_and_single() {
        let s = aggregate_stats(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.std, s.q25, s.median, s.q75), (5.0, 0.0, 5.0, 5.0, 5.0));
        let one = aggregate_stats(&[2.5]).unwrap();
        assert_eq!((one.std, one.median), (0.0, 2.5));
        assert!(matches!(aggregate_stats(&[]), Err(StatsError::Empty)));
        assert!(matches!(aggregate_stats(&[1.0, f64::NAN]), Err(StatsError::NonFinite(_))));
    }

    #[test]
    fn interpolated_quartiles() {
        let s = aggregate_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.q25, s.median, s.q75), (1.75, 2.5, 3.25));
    }

    #[test]
    fn stats_csv_round_trip() {
        let scalars = vec![
            PotholeScalar { id: "a".into(), characteristic_depth: 10.5, mean_gradient: 0.25 },
            PotholeScalar { id: "b".into(), characteristic_depth: 20.0, mean_gradient: 0.125 },
        ];
        let stats = aggregate_stats(&[10.5, 20.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stats.csv");
        write_stats_csv(&p, &scalars, &stats).unwrap();
        assert_eq!(read_stats_csv(&p).unwrap(), scalars);
        let text = fs::read_to_string(&p).unwrap();
        for key in ["mean,", "std,", "min,", "25%,", "50%,", "75%,", "max,"] {
            assert!(text.lines().any(|l| l.starts_with(key)), "missing {key}");
        }
    }
}
