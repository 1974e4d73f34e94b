//! Patch extraction and hand-crafted multi-channel feature providers, plus
//! the MCFD binary format for externally extracted features.
//!
//! MCFD layout (little-endian):
//!
//! ```text
//! "MCFD" | u32 version = 1 | u32 d | u32 H | u32 W | d*H*W f32 values
//! ```
//!
//! Values are channel-major, row-major within a channel.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{FeatureMap, Plane};

pub const MCFD_MAGIC: [u8; 4] = *b"MCFD";
pub const MCFD_VERSION: u32 = 1;
const MCFD_HEADER: usize = 20;

pub const DEFAULT_PADDING: f64 = 2.0;
pub const DEFAULT_OUT_SIZE: (usize, usize) = (64, 64);

/// Resampled search region around a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Image,
    pub source_box: BBox,
    pub padding_factor: f64,
    /// Frame the patch was cut from; drives per-frame providers.
    pub frame_index: usize,
}

/// Bilinear resample of the box scaled by `padding_factor` about its center
/// to `out_size = (height, width)`. Samples outside the frame replicate the
/// nearest edge pixel.
pub fn extract_patch(
    frame: &Image,
    bbox: &BBox,
    padding_factor: f64,
    out_size: (usize, usize),
) -> Result<Patch> {
    if bbox.is_degenerate() {
        return Err(Error::DegenerateBox {
            w: bbox.w,
            h: bbox.h,
        });
    }
    if !(padding_factor >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "padding factor must be at least 1, got {padding_factor}"
        )));
    }
    let (oh, ow) = out_size;
    if oh == 0 || ow == 0 {
        return Err(Error::Dimension(format!("patch size {oh}x{ow}")));
    }
    let (cx, cy) = bbox.center();
    let (rw, rh) = (bbox.w * padding_factor, bbox.h * padding_factor);
    let (x0, y0) = (cx - rw / 2.0, cy - rh / 2.0);
    let (sx, sy) = (rw / ow as f64, rh / oh as f64);
    let (fh, fw, nc) = (frame.height(), frame.width(), frame.channels());
    let max_r = (fh - 1) as f64;
    let max_c = (fw - 1) as f64;

    let mut data = Vec::with_capacity(oh * ow * nc);
    for i in 0..oh {
        let yy = (y0 + (i as f64 + 0.5) * sy - 0.5).clamp(0.0, max_r);
        let r0 = yy.floor() as usize;
        let r1 = (r0 + 1).min(fh - 1);
        let fy = yy - r0 as f64;
        for j in 0..ow {
            let xx = (x0 + (j as f64 + 0.5) * sx - 0.5).clamp(0.0, max_c);
            let c0 = xx.floor() as usize;
            let c1 = (c0 + 1).min(fw - 1);
            let fx = xx - c0 as f64;
            for ch in 0..nc {
                let top = frame.get(r0, c0, ch) * (1.0 - fx) + frame.get(r0, c1, ch) * fx;
                let bot = frame.get(r1, c0, ch) * (1.0 - fx) + frame.get(r1, c1, ch) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(Patch {
        pixels: Image::new(oh, ow, nc, data)?,
        source_box: *bbox,
        padding_factor,
        frame_index: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provider {
    Grayscale,
    Color3,
    GradHist {
        bins: usize,
    },
    /// Reads `{stem}_{frame:06}.mcfd` for each frame.
    File {
        stem: PathBuf,
    },
}

/// Per-frame i.i.d. Gaussian channels appended after the provider output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub channels: usize,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub provider: Provider,
    pub cell_size: usize,
    pub window: bool,
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self::gradhist(9, 4)
    }
}

impl FeatureSpec {
    pub fn gradhist(bins: usize, cell_size: usize) -> Self {
        Self {
            provider: Provider::GradHist { bins },
            cell_size,
            window: true,
            normalize: true,
            noise: None,
        }
    }

    pub fn grayscale() -> Self {
        Self {
            provider: Provider::Grayscale,
            cell_size: 1,
            window: true,
            normalize: true,
            noise: None,
        }
    }

    pub fn color3() -> Self {
        Self {
            provider: Provider::Color3,
            ..Self::grayscale()
        }
    }

    /// File-backed features keep their external scaling by default.
    pub fn file(stem: impl Into<PathBuf>) -> Self {
        Self {
            provider: Provider::File { stem: stem.into() },
            cell_size: 1,
            window: true,
            normalize: false,
            noise: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 {
            return Err(Error::InvalidParameter("cell_size must be positive".into()));
        }
        if let Provider::GradHist { bins } = self.provider {
            if bins < 2 {
                return Err(Error::InvalidParameter(format!(
                    "gradhist needs at least 2 bins, got {bins}"
                )));
            }
        }
        if let Some(n) = &self.noise {
            if !(n.sigma >= 0.0 && n.sigma.is_finite()) {
                return Err(Error::InvalidParameter(format!("noise sigma {}", n.sigma)));
            }
        }
        Ok(())
    }

    /// Channels produced by the provider alone, if known without data.
    pub fn base_channels(&self) -> Option<usize> {
        match self.provider {
            Provider::Grayscale => Some(1),
            Provider::Color3 => Some(3),
            Provider::GradHist { bins } => Some(bins),
            Provider::File { .. } => None,
        }
    }

    /// Feature-grid size for a pixel patch of `out_size`.
    pub fn grid(&self, out_size: (usize, usize)) -> (usize, usize) {
        match self.provider {
            Provider::File { .. } => out_size,
            _ => (out_size.0 / self.cell_size, out_size.1 / self.cell_size),
        }
    }

    /// Path of the feature file for `frame`, for the file provider.
    pub fn file_path(stem: &Path, frame: usize) -> PathBuf {
        PathBuf::from(format!("{}_{frame:06}.mcfd", stem.display()))
    }
}

/// Computes the feature map of a patch.
pub fn featurize(p: &Patch, spec: &FeatureSpec) -> Result<FeatureMap> {
    spec.validate()?;
    let cell = spec.cell_size;
    let mut channels = match &spec.provider {
        Provider::File { stem } => {
            load_feature_file(FeatureSpec::file_path(stem, p.frame_index))?.into_channels()
        }
        provider => {
            let (h, w) = (p.pixels.height(), p.pixels.width());
            if h % cell != 0 || w % cell != 0 {
                return Err(Error::InvalidParameter(format!(
                    "cell size {cell} does not divide patch {h}x{w}"
                )));
            }
            match provider {
                Provider::Grayscale => vec![average_pool(&p.pixels.luminance(), cell)],
                Provider::Color3 => (0..3)
                    .map(|ch| average_pool(&p.pixels.channel_plane(ch), cell))
                    .collect(),
                Provider::GradHist { bins } => {
                    gradient_histogram(&p.pixels.luminance(), *bins, cell)
                }
                Provider::File { .. } => unreachable!(),
            }
        }
    };
    if spec.window {
        let (h, w) = channels[0].dims();
        let win = hann2d(h, w);
        for ch in &mut channels {
            for (v, g) in ch.as_mut_slice().iter_mut().zip(win.as_slice()) {
                *v *= g;
            }
        }
    }
    if spec.normalize {
        channels.iter_mut().for_each(normalize_channel);
    }
    if let Some(noise) = &spec.noise {
        let (h, w) = channels[0].dims();
        channels.extend(noise_channels(noise, p.frame_index, h, w)?);
    }
    FeatureMap::new(channels)
}

fn average_pool(p: &Plane, cell: usize) -> Plane {
    let pooled = sum_pool(p, cell);
    let inv = 1.0 / (cell * cell) as f64;
    pooled.map(|v| v * inv)
}

fn sum_pool(p: &Plane, cell: usize) -> Plane {
    if cell == 1 {
        return p.clone();
    }
    let (h, w) = (p.height() / cell, p.width() / cell);
    Plane::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for y in r * cell..(r + 1) * cell {
            for x in c * cell..(c + 1) * cell {
                acc += p.get(y, x);
            }
        }
        acc
    })
    .expect("pooled dims are non-empty")
}

/// Unsigned gradient-orientation histogram: `bins` channels centered at
/// `k * pi / bins`, magnitude-weighted with linear interpolation between
/// neighbouring bins, summed over `cell x cell` blocks. Gradients are
/// central differences with edge replication.
pub fn gradient_histogram(lum: &Plane, bins: usize, cell: usize) -> Vec<Plane> {
    let (h, w) = lum.dims();
    let mut raw: Vec<Vec<f64>> = vec![vec![0.0; h * w]; bins];
    let bin_width = PI / bins as f64;
    for r in 0..h {
        let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let gx = (lum.get(r, cr) - lum.get(r, cl)) * 0.5;
            let gy = (lum.get(rd, c) - lum.get(ru, c)) * 0.5;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(PI);
            let pos = theta / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as usize) % bins;
            let b1 = (b0 + 1) % bins;
            raw[b0][r * w + c] += mag * (1.0 - frac);
            raw[b1][r * w + c] += mag * frac;
        }
    }
    raw.into_iter()
        .map(|v| sum_pool(&Plane::new(h, w, v).expect("dims checked"), cell))
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Separable 2-D Hann window.
pub fn hann2d(h: usize, w: usize) -> Plane {
    let (wy, wx) = (hann(h), hann(w));
    Plane::from_fn(h, w, |r, c| wy[r] * wx[c]).expect("window dims are non-empty")
}

fn normalize_channel(p: &mut Plane) {
    let n = p.len() as f64;
    let mean = p.as_slice().iter().sum::<f64>() / n;
    p.as_mut_slice().iter_mut().for_each(|v| *v -= mean);
    let norm = p.norm();
    if norm <= 1e-10 {
        p.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    } else {
        p.as_mut_slice().iter_mut().for_each(|v| *v /= norm);
    }
}

fn noise_channels(spec: &NoiseSpec, frame: usize, h: usize, w: usize) -> Result<Vec<Plane>> {
    let seed = spec
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(frame as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spec.sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;
    (0..spec.channels)
        .map(|_| Plane::from_fn(h, w, |_, _| normal.sample(&mut rng)))
        .collect()
}

/// Encodes a feature map as MCFD bytes.
pub fn encode_feature_map(f: &FeatureMap) -> Result<Vec<u8>> {
    let (h, w) = f.dims();
    let d = f.channel_count();
    let mut out = Vec::with_capacity(MCFD_HEADER + 4 * d * h * w);
    out.extend_from_slice(&MCFD_MAGIC);
    for v in [MCFD_VERSION, d as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for ch in f.channels() {
        for &v in ch.as_slice() {
            let v = v as f32;
            if !v.is_finite() {
                return Err(Error::NonFinite("feature value does not fit in f32".into()));
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes MCFD bytes. Nothing is returned unless the whole payload is valid.
pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: MCFD_HEADER,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != MCFD_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < MCFD_HEADER {
        return Err(Error::Truncated {
            expected: MCFD_HEADER,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != MCFD_VERSION {
        return Err(Error::Version(version));
    }
    let (d, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    if d == 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!(
            "feature file declares {d}x{h}x{w}"
        )));
    }
    let expected = d
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(MCFD_HEADER))
        .ok_or_else(|| Error::Dimension("feature file dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[MCFD_HEADER..expected];
    let mut values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    let mut channels = Vec::with_capacity(d);
    for l in 0..d {
        let data: Vec<f64> = values.by_ref().take(h * w).map(f64::from).collect();
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "channel {l}, element {pos} is not finite"
            )));
        }
        channels.push(Plane::new(h, w, data)?);
    }
    FeatureMap::new(channels)
}

pub fn save_feature_file(path: impl AsRef<Path>, f: &FeatureMap) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_map(f)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_map(&bytes)
}
