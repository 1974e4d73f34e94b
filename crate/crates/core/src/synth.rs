//! Synthetic sequences with exact ground truth, and a feature provider that
//! appends temporally inconsistent noise channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::features::{FeatureSpec, NoiseSpec};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frames: usize,
    /// `(height, width)`.
    pub frame_size: (usize, usize),
    /// `(height, width)`.
    pub object_size: (usize, usize),
    /// Displacement `(dx, dy)` applied before each frame after the first;
    /// `frames - 1` entries.
    pub motion: Vec<(f64, f64)>,
    pub texture_seed: u64,
    pub noise_channels: usize,
    pub noise_sigma: f64,
    pub informative_channels: usize,
}

impl SynthSpec {
    /// Constant velocity `(dx, dy)` per frame.
    pub fn linear(
        frames: usize,
        frame_size: (usize, usize),
        object_size: (usize, usize),
        step: (f64, f64),
        texture_seed: u64,
    ) -> Self {
        Self {
            frames,
            frame_size,
            object_size,
            motion: vec![step; frames.saturating_sub(1)],
            texture_seed,
            noise_channels: 0,
            noise_sigma: 0.0,
            informative_channels: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidParameter("need at least one frame".into()));
        }
        let (fh, fw) = self.frame_size;
        let (oh, ow) = self.object_size;
        if oh == 0 || ow == 0 || oh + 2 > fh || ow + 2 > fw {
            return Err(Error::InvalidParameter(format!(
                "object {oh}x{ow} does not fit in frame {fh}x{fw}"
            )));
        }
        if self.motion.len() + 1 != self.frames {
            return Err(Error::InvalidParameter(format!(
                "{} frames need {} motion steps, got {}",
                self.frames,
                self.frames - 1,
                self.motion.len()
            )));
        }
        if self
            .motion
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(Error::NonFinite("motion".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Ground-truth boxes; the object starts centered on the integer grid.
    pub fn boxes(&self) -> Result<Vec<BBox>> {
        self.validate()?;
        let (fh, fw) = self.frame_size;
        let (oh, ow) = self.object_size;
        let mut b = BBox::new(
            ((fw - ow) / 2) as f64,
            ((fh - oh) / 2) as f64,
            ow as f64,
            oh as f64,
        );
        let mut out = vec![b];
        for (i, &(dx, dy)) in self.motion.iter().enumerate() {
            b = b.translate(dx, dy);
            let inside = b.x >= 1.0
                && b.y >= 1.0
                && b.x + b.w <= (fw - 1) as f64
                && b.y + b.h <= (fh - 1) as f64;
            if !inside {
                return Err(Error::MotionEscapes { frame: i + 1 });
            }
            out.push(b);
        }
        Ok(out)
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Random texture of `h x w` with values in `[lo, hi]`, made of `block`-sized
/// constant tiles blurred by a 3x3 box filter.
fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize, block: usize, lo: f64, hi: f64) -> Vec<f64> {
    let (bh, bw) = (h.div_ceil(block), w.div_ceil(block));
    let tiles: Vec<f64> = (0..bh * bw).map(|_| rng.random_range(lo..=hi)).collect();
    let raw: Vec<f64> = (0..h * w)
        .map(|i| tiles[(i / w / block) * bw + (i % w) / block])
        .collect();
    (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let mut acc = 0.0;
            let mut n = 0.0;
            for y in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for x in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    acc += raw[y * w + x];
                    n += 1.0;
                }
            }
            acc / n
        })
        .collect()
}

/// Renders the sequence. Frames are grayscale with values on the 8-bit grid,
/// so writing them as PNG is lossless.
pub fn generate_sequence(spec: &SynthSpec) -> Result<(Vec<Image>, Vec<BBox>)> {
    let boxes = spec.boxes()?;
    let (fh, fw) = spec.frame_size;
    let (oh, ow) = spec.object_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let background = texture(&mut rng, fh, fw, 6, 0.0, 0.4);
    let object = texture(&mut rng, oh, ow, 2, 0.55, 1.0);
    let sample_object = |y: f64, x: f64| -> f64 {
        let y = y.clamp(0.0, (oh - 1) as f64);
        let x = x.clamp(0.0, (ow - 1) as f64);
        let (r0, c0) = (y.floor() as usize, x.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(oh - 1), (c0 + 1).min(ow - 1));
        let (fy, fx) = (y - r0 as f64, x - c0 as f64);
        let at = |r: usize, c: usize| object[r * ow + c];
        let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
        let bot = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
        top * (1.0 - fy) + bot * fy
    };
    let frames = boxes
        .iter()
        .map(|b| {
            Image::gray_from_fn(fh, fw, |r, c| {
                let (oy, ox) = (r as f64 - b.y, c as f64 - b.x);
                let v = if oy >= 0.0 && oy < b.h && ox >= 0.0 && ox < b.w {
                    sample_object(oy, ox)
                } else {
                    background[r * fw + c]
                };
                quantize(v)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, boxes))
}

/// `base` with `spec.noise_channels` i.i.d. Gaussian channels of standard
/// deviation `spec.noise_sigma` appended, redrawn for every frame.
pub fn noisy_channel_provider(base: &FeatureSpec, spec: &SynthSpec) -> FeatureSpec {
    let mut out = base.clone();
    out.noise = (spec.noise_channels > 0).then_some(NoiseSpec {
        channels: spec.noise_channels,
        sigma: spec.noise_sigma,
        seed: spec.texture_seed ^ 0x5EED_0F_C0FFEE,
    });
    out
}
