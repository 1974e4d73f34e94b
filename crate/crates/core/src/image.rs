//! Minimal frame container with intensities in `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Plane;

/// Row-major interleaved image with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn gray_from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, 1, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Channel `ch` as a plane; gray images repeat their only channel.
    pub fn channel_plane(&self, ch: usize) -> Plane {
        let ch = if self.channels == 1 { 0 } else { ch };
        Plane::from_fn(self.height, self.width, |r, c| self.get(r, c, ch))
            .expect("image dims are non-empty")
    }

    /// Luminance (Rec. 601 weights for RGB).
    pub fn luminance(&self) -> Plane {
        if self.channels == 1 {
            return self.channel_plane(0);
        }
        Plane::from_fn(self.height, self.width, |r, c| {
            0.299 * self.get(r, c, 0) + 0.587 * self.get(r, c, 1) + 0.114 * self.get(r, c, 2)
        })
        .expect("image dims are non-empty")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(g) => Self {
                height,
                width,
                channels: 1,
                data: g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            },
            other => {
                let rgb = other.to_rgb8();
                Self {
                    height,
                    width,
                    channels: 3,
                    data: rgb
                        .into_raw()
                        .into_iter()
                        .map(|v| v as f64 / 255.0)
                        .collect(),
                }
            }
        }
    }

    /// Writes an 8-bit image; values are clamped to `[0, 1]` and rounded.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if self.channels == 1 {
            let buf: GrayImage =
                ImageBuffer::from_fn(w, h, |x, y| Luma([q(self.get(y as usize, x as usize, 0))]));
            buf.save(path)
        } else {
            let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
                let (r, c) = (y as usize, x as usize);
                Rgb([
                    q(self.get(r, c, 0)),
                    q(self.get(r, c, 1)),
                    q(self.get(r, c, 2)),
                ])
            });
            buf.save(path)
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
