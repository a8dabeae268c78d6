//! Float images in `[0, 1]`, stored row-major with interleaved channels.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image file not found: {0}")]
    Missing(String),
    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot encode image {path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    Channels(usize),
    #[error("buffer of {got} values does not match {width}x{height}x{channels}")]
    Shape {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::Channels(channels));
        }
        if data.len() != width * height * channels {
            return Err(RasterError::Shape {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Channel-planar copy (`[C, H, W]`), the layout the networks consume.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    pub fn from_planar(
        width: usize,
        height: usize,
        channels: usize,
        planar: &[f32],
    ) -> Result<Self, RasterError> {
        let mut img = Self::zeros(width, height, channels);
        if planar.len() != img.data.len() {
            return Err(RasterError::Shape {
                width,
                height,
                channels,
                got: planar.len(),
            });
        }
        let plane = width * height;
        for (i, px) in img.data.chunks_exact_mut(channels).enumerate() {
            for (c, v) in px.iter_mut().enumerate() {
                *v = planar[c * plane + i];
            }
        }
        Ok(img)
    }

    /// Loads a PNG as grayscale (1 channel) or RGB (3 channels); alpha is dropped.
    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let img = open_image(path)?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (channels, bytes) = match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => (1, img.to_luma8().into_raw()),
            _ => (3, img.to_rgb8().into_raw()),
        };
        Ok(Self {
            width,
            height,
            channels,
            data: bytes.into_iter().map(|b| f32::from(b) / 255.0).collect(),
        })
    }

    /// Quantizes to 8 bits (round to nearest, clamped) and writes a PNG.
    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        let bytes = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => GrayImage::from_raw(w, h, bytes).map(|b| b.save(path)),
            3 => RgbImage::from_raw(w, h, bytes).map(|b| b.save(path)),
            c => return Err(RasterError::Channels(c)),
        };
        res.expect("buffer length checked at construction")
            .map_err(|source| RasterError::Encode {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

pub(crate) fn open_image(path: &Path) -> Result<DynamicImage, RasterError> {
    if !path.is_file() {
        return Err(RasterError::Missing(path.display().to_string()));
    }
    image::open(path).map_err(|source| RasterError::Decode {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a raw 8-bit RGB buffer as PNG.
pub fn save_rgb8(path: &Path, width: u32, height: u32, rgb: Vec<u8>) -> Result<(), RasterError> {
    let buf: RgbImage = ImageBuffer::from_raw(width, height, rgb).ok_or(RasterError::Shape {
        width: width as usize,
        height: height as usize,
        channels: 3,
        got: 0,
    })?;
    buf.save(path).map_err(|source| RasterError::Encode {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a raw 8-bit grayscale buffer as PNG.
pub fn save_gray8(path: &Path, width: u32, height: u32, gray: Vec<u8>) -> Result<(), RasterError> {
    let buf: GrayImage = ImageBuffer::from_raw(width, height, gray).ok_or(RasterError::Shape {
        width: width as usize,
        height: height as usize,
        channels: 1,
        got: 0,
    })?;
    buf.save(path).map_err(|source| RasterError::Encode {
        path: path.display().to_string(),
        source,
    })
}
