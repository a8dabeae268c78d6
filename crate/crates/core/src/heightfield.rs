//! Pothole scan triplets, metric depth fields and subdivided grid meshes.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::colormap::{jet_decode_u8, Decoded};
use crate::raster::{open_image, RasterError};

/// Label pixels at or above this luma are pothole pixels.
pub const LABEL_THRESHOLD: u8 = 128;
pub const DEFAULT_DEPTH_SCALE_MM: f64 = 110.0;
pub const DEFAULT_PIXEL_PITCH_MM: f64 = 1.0;
pub const DEFAULT_SUBDIVISIONS: u32 = 7;
/// Meshes beyond this level would exceed 16M vertices.
pub const MAX_SUBDIVISIONS: u32 = 12;

#[derive(Debug, Error)]
pub enum HeightfieldError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("undecodable raster: {0}")]
    Undecodable(String),
    #[error("dimension mismatch in sample {id}: rgb {rgb:?}, heatmap {heatmap:?}, label {label:?}")]
    DimensionMismatch {
        id: String,
        rgb: (usize, usize),
        heatmap: (usize, usize),
        label: (usize, usize),
    },
    #[error("sample {id} is {got:?}, expected {expected:?}")]
    UnexpectedSize {
        id: String,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("depth_scale must be positive and finite, got {0}")]
    DepthScale(f64),
    #[error("pixel_pitch must be positive and finite, got {0}")]
    PixelPitch(f64),
    #[error("depth field is empty")]
    EmptyField,
    #[error("invalid depth field: {0}")]
    InvalidField(String),
    #[error("subdivision level {0} exceeds the maximum of {MAX_SUBDIVISIONS}")]
    Subdivisions(u32),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<RasterError> for HeightfieldError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Missing(p) => Self::MissingFile(p),
            other => Self::Undecodable(other.to_string()),
        }
    }
}

/// One scan: RGB overlay, jet heatmap and binary label, all `width x height`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotholeSample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Interleaved 8-bit RGB.
    pub rgb: Vec<u8>,
    /// Interleaved 8-bit RGB, jet-encoded depth.
    pub heatmap: Vec<u8>,
    /// `true` marks a pothole pixel.
    pub mask: Vec<bool>,
}

impl PotholeSample {
    pub fn check_size(&self, width: usize, height: usize) -> Result<(), HeightfieldError> {
        if (self.width, self.height) != (width, height) {
            return Err(HeightfieldError::UnexpectedSize {
                id: self.id.clone(),
                got: (self.width, self.height),
                expected: (width, height),
            });
        }
        Ok(())
    }
}

/// File locations of one sample in the `rgb/ tdisp/ label/` layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePaths {
    pub id: String,
    pub rgb: PathBuf,
    pub heatmap: PathBuf,
    pub label: PathBuf,
}

impl SamplePaths {
    pub fn in_root(root: &Path, id: &str) -> Self {
        let file = format!("{id}.png");
        Self {
            id: id.to_string(),
            rgb: root.join("rgb").join(&file),
            heatmap: root.join("tdisp").join(&file),
            label: root.join("label").join(&file),
        }
    }

    pub fn load(&self) -> Result<PotholeSample, HeightfieldError> {
        load_pothole_sample(&self.rgb, &self.heatmap, &self.label)
    }
}

/// Lists every sample id that appears in any of the three subdirectories,
/// sorted. Missing partners surface as [`HeightfieldError::MissingFile`] on load.
pub fn discover_samples(root: &Path) -> Result<Vec<SamplePaths>, HeightfieldError> {
    let mut ids = BTreeSet::new();
    for sub in ["rgb", "tdisp", "label"] {
        let dir = root.join(sub);
        if !dir.is_dir() {
            continue;
        }
        let entries = fs::read_dir(&dir).map_err(|source| HeightfieldError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for entry in entries.flatten() {
            let p = entry.path();
            if p.extension().and_then(|e| e.to_str()) == Some("png") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    ids.insert(stem.to_string());
                }
            }
        }
    }
    Ok(ids.iter().map(|id| SamplePaths::in_root(root, id)).collect())
}

/// Loads and dimension-checks a triplet. The id is the heatmap file stem.
pub fn load_pothole_sample(
    rgb_path: &Path,
    heatmap_path: &Path,
    label_path: &Path,
) -> Result<PotholeSample, HeightfieldError> {
    let rgb = open_image(rgb_path)?.to_rgb8();
    let heat = open_image(heatmap_path)?.to_rgb8();
    let label = open_image(label_path)?.to_luma8();
    let id = heatmap_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();

    let dims = |w: u32, h: u32| (w as usize, h as usize);
    let (rd, hd, ld) = (
        dims(rgb.width(), rgb.height()),
        dims(heat.width(), heat.height()),
        dims(label.width(), label.height()),
    );
    if rd != hd || hd != ld {
        return Err(HeightfieldError::DimensionMismatch {
            id,
            rgb: rd,
            heatmap: hd,
            label: ld,
        });
    }
    Ok(PotholeSample {
        id,
        width: hd.0,
        height: hd.1,
        rgb: rgb.into_raw(),
        heatmap: heat.into_raw(),
        mask: label.into_raw().into_iter().map(|v| v >= LABEL_THRESHOLD).collect(),
    })
}

/// Metric depths in mm, positive below the road surface.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    pub width: usize,
    pub height: usize,
    /// Millimetres per pixel.
    pub pixel_pitch: f64,
    /// Row-major.
    pub depths: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthField {
    pub fn new(
        width: usize,
        height: usize,
        pixel_pitch: f64,
        depths: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self, HeightfieldError> {
        if width == 0 || height == 0 {
            return Err(HeightfieldError::EmptyField);
        }
        if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
            return Err(HeightfieldError::PixelPitch(pixel_pitch));
        }
        let n = width * height;
        if depths.len() != n || mask.len() != n {
            return Err(HeightfieldError::InvalidField(format!(
                "{} depths and {} mask cells for a {width}x{height} grid",
                depths.len(),
                mask.len()
            )));
        }
        if let Some(bad) = depths.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(HeightfieldError::InvalidField(format!("depth {bad}")));
        }
        Ok(Self {
            width,
            height,
            pixel_pitch,
            depths,
            mask,
        })
    }

    /// Builds a fully masked field by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        pixel_pitch: f64,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, HeightfieldError> {
        let depths = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixel_pitch, depths, vec![true; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.depths[y * self.width + x]
    }

    pub fn max_depth(&self) -> f64 {
        self.depths.iter().copied().fold(0.0, f64::max)
    }

    /// Physical extent in mm, `(x, y)`.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.pixel_pitch,
            self.height as f64 * self.pixel_pitch,
        )
    }

    /// Bilinear sample at a physical location. Pixel centres sit at
    /// `(i + 0.5) * pitch`; locations beyond the outer centres clamp.
    pub fn sample_mm(&self, x_mm: f64, y_mm: f64) -> f64 {
        let u = (x_mm / self.pixel_pitch - 0.5).clamp(0.0, (self.width - 1) as f64);
        let v = (y_mm / self.pixel_pitch - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Per-field decode diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    /// Pixels whose color was farther than the off-curve threshold from jet.
    pub off_curve: usize,
}

/// Decodes the heatmap into depths: `depth = depth_scale * jet_decode(pixel)`.
/// The label mask is copied through untouched.
pub fn heatmap_to_depthfield(
    sample: &PotholeSample,
    depth_scale: f64,
    pixel_pitch: f64,
) -> Result<(DepthField, DecodeStats), HeightfieldError> {
    if !(depth_scale.is_finite() && depth_scale > 0.0) {
        return Err(HeightfieldError::DepthScale(depth_scale));
    }
    if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
        return Err(HeightfieldError::PixelPitch(pixel_pitch));
    }
    // heatmaps carry few distinct colors; decode each once
    let mut cache: HashMap<[u8; 3], Decoded> = HashMap::new();
    let mut stats = DecodeStats::default();
    let depths = sample
        .heatmap
        .chunks_exact(3)
        .map(|px| {
            let key = [px[0], px[1], px[2]];
            let d = *cache.entry(key).or_insert_with(|| jet_decode_u8(key));
            if d.off_curve() {
                stats.off_curve += 1;
            }
            depth_scale * d.value
        })
        .collect();
    let field = DepthField::new(
        sample.width,
        sample.height,
        pixel_pitch,
        depths,
        sample.mask.clone(),
    )?;
    Ok((field, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    /// `(x, y, z)` in mm; z is depth below the surface.
    pub vertices: Vec<[f64; 3]>,
    /// Zero-based, counter-clockwise seen from +z.
    pub faces: Vec<[u32; 3]>,
    pub uv: Vec<[f64; 2]>,
}

impl TriangleMesh {
    pub fn expected_counts(subdivisions: u32) -> (usize, usize) {
        let n = 1usize << subdivisions;
        ((n + 1) * (n + 1), 2 * n * n)
    }
}

/// Meshes the field as a regular `(2^s + 1)^2` vertex grid spanning its
/// physical extent, each vertex displaced by the bilinear depth sample.
pub fn depthfield_to_mesh(
    field: &DepthField,
    subdivisions: u32,
) -> Result<TriangleMesh, HeightfieldError> {
    if field.width == 0 || field.height == 0 || field.depths.is_empty() {
        return Err(HeightfieldError::EmptyField);
    }
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(HeightfieldError::Subdivisions(subdivisions));
    }
    let n = 1usize << subdivisions;
    let side = n + 1;
    let (ext_x, ext_y) = field.extent();

    let mut vertices = Vec::with_capacity(side * side);
    let mut uv = Vec::with_capacity(side * side);
    for i in 0..side {
        let fy = i as f64 / n as f64;
        let y = fy * ext_y;
        for j in 0..side {
            let fx = j as f64 / n as f64;
            let x = fx * ext_x;
            vertices.push([x, y, field.sample_mm(x, y)]);
            uv.push([fx, 1.0 - fy]);
        }
    }

    let mut faces = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            let a = (i * side + j) as u32;
            let b = a + 1;
            let c = a + side as u32;
            let d = c + 1;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    Ok(TriangleMesh {
        vertices,
        faces,
        uv,
    })
}

/// Renders the mesh as Wavefront OBJ text: `v`, `vt`, then `f` records,
/// six decimal places, one-based indices.
pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 64 + mesh.faces.len() * 40);
    out.push_str("# pothole heightfield mesh, units mm\n");
    for v in &mesh.vertices {
        writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]).unwrap();
    }
    for t in &mesh.uv {
        writeln!(out, "vt {:.6} {:.6}", t[0], t[1]).unwrap();
    }
    for f in &mesh.faces {
        let (a, b, c) = (f[0] + 1, f[1] + 1, f[2] + 1);
        writeln!(out, "f {a}/{a} {b}/{b} {c}/{c}").unwrap();
    }
    out
}

pub fn export_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), HeightfieldError> {
    fs::write(path, obj_string(mesh)).map_err(|source| HeightfieldError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colormap::jet_encode_u8;

    fn uniform_sample(value: f64, w: usize, h: usize) -> PotholeSample {
        let px = jet_encode_u8(value).unwrap();
        PotholeSample {
            id: "u".into(),
            width: w,
            height: h,
            rgb: vec![128; w * h * 3],
            heatmap: px.iter().copied().cycle().take(w * h * 3).collect(),
            mask: vec![true; w * h],
        }
    }

    #[test]
    fn uniform_half_heatmap_gives_55mm() {
        // jet(0.5) = (0.5, 1, 0.5) -> 8-bit (128, 255, 128), which decodes
        // within one quantization step of 0.5
        let (f, stats) = heatmap_to_depthfield(&uniform_sample(0.5, 8, 8), 110.0, 1.0).unwrap();
        assert_eq!(stats.off_curve, 0);
        for d in &f.depths {
            assert!((d - 55.0).abs() <= 110.0 / 255.0, "{d}");
        }
        // exact when the heatmap carries the exact curve point
        let exact = crate::colormap::jet_decode([0.5, 1.0, 0.5]);
        assert!((110.0 * exact - 55.0).abs() < 1e-9);
    }

    #[test]
    fn zero_heatmap_gives_zero_depth() {
        let (f, _) = heatmap_to_depthfield(&uniform_sample(0.0, 4, 4), 110.0, 1.0).unwrap();
        // 8-bit jet(0) is (0, 0, 128): within one quantization step of zero
        assert!(f.depths.iter().all(|&d| (0.0..=110.0 / 255.0).contains(&d)));
    }

    #[test]
    fn rejects_bad_scale() {
        let s = uniform_sample(0.3, 4, 4);
        assert!(matches!(
            heatmap_to_depthfield(&s, 0.0, 1.0),
            Err(HeightfieldError::DepthScale(_))
        ));
        assert!(matches!(
            heatmap_to_depthfield(&s, 110.0, -1.0),
            Err(HeightfieldError::PixelPitch(_))
        ));
    }

    #[test]
    fn depth_scale_is_exactly_linear() {
        let mut s = uniform_sample(0.0, 6, 6);
        for (i, px) in s.heatmap.chunks_exact_mut(3).enumerate() {
            px.copy_from_slice(&jet_encode_u8(i as f64 / 35.0).unwrap());
        }
        let (a, _) = heatmap_to_depthfield(&s, 37.5, 1.0).unwrap();
        let (b, _) = heatmap_to_depthfield(&s, 75.0, 1.0).unwrap();
        for (x, y) in a.depths.iter().zip(&b.depths) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn mesh_counts_match_closed_form() {
        let f = DepthField::from_fn(5, 7, 1.0, |x, y| (x + y) as f64).unwrap();
        for s in 0..=7 {
            let m = depthfield_to_mesh(&f, s).unwrap();
            let (nv, nf) = TriangleMesh::expected_counts(s);
            assert_eq!(m.vertices.len(), nv);
            assert_eq!(m.faces.len(), nf);
            assert_eq!(m.uv.len(), nv);
            assert!(m.faces.iter().flatten().all(|&i| (i as usize) < nv));
        }
        assert_eq!(TriangleMesh::expected_counts(0), (4, 2));
        assert_eq!(TriangleMesh::expected_counts(7), (16_641, 32_768));
    }

    #[test]
    fn zero_field_gives_flat_mesh() {
        let f = DepthField::from_fn(10, 10, 2.0, |_, _| 0.0).unwrap();
        let m = depthfield_to_mesh(&f, 3).unwrap();
        assert!(m.vertices.iter().all(|v| v[2] == 0.0));
        assert_eq!(m.vertices.last().unwrap()[0], 20.0);
    }

    #[test]
    fn mesh_z_within_field_range_and_uv_in_unit_square() {
        let f = DepthField::from_fn(9, 6, 1.5, |x, y| ((x * 7 + y * 3) % 5) as f64 * 2.5).unwrap();
        let m = depthfield_to_mesh(&f, 5).unwrap();
        let max = f.max_depth();
        for (v, t) in m.vertices.iter().zip(&m.uv) {
            assert!(v[2] >= 0.0 && v[2] <= max);
            assert!((0.0..=1.0).contains(&t[0]) && (0.0..=1.0).contains(&t[1]));
        }
    }

    #[test]
    fn obj_record_counts() {
        let f = DepthField::from_fn(4, 4, 1.0, |x, _| x as f64).unwrap();
        let text = obj_string(&depthfield_to_mesh(&f, 0).unwrap());
        let count = |p: &str| text.lines().filter(|l| l.split(' ').next() == Some(p)).count();
        assert_eq!((count("v"), count("vt"), count("f")), (4, 4, 2));
    }

    #[test]
    fn new_field_validates() {
        assert!(matches!(
            DepthField::new(0, 3, 1.0, vec![], vec![]),
            Err(HeightfieldError::EmptyField)
        ));
        assert!(DepthField::new(1, 1, 1.0, vec![-1.0], vec![true]).is_err());
        assert!(DepthField::new(1, 1, 1.0, vec![f64::NAN], vec![true]).is_err());
        assert!(DepthField::new(2, 1, 1.0, vec![1.0], vec![true]).is_err());
    }
}
