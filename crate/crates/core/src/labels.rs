//! Desired correlation output used as the regression target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Plane;

/// Geometry and sharpness of the Gaussian label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Gaussian width as a fraction of `sqrt(target_h * target_w)`.
    pub sigma_factor: f64,
    pub height: usize,
    pub width: usize,
}

impl LabelConfig {
    pub const DEFAULT_SIGMA_FACTOR: f64 = 0.1;

    pub fn new(sigma_factor: f64, height: usize, width: usize) -> Result<Self> {
        let cfg = Self {
            sigma_factor,
            height,
            width,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_factor > 0.0 && self.sigma_factor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_factor must lie in (0, 1), got {}",
                self.sigma_factor
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Dimension(format!(
                "label grid must be non-empty, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Periodic 2-D Gaussian peaking at `(0, 0)` with
/// `sigma = sigma_factor * sqrt(target_h * target_w)`.
///
/// Target dimensions are in label-grid cells. Distances wrap around, so
/// row `H - 1` is one cell away from row 0.
pub fn gaussian_label(cfg: &LabelConfig, target_h: f64, target_w: f64) -> Result<Plane> {
    cfg.validate()?;
    if !(target_h > 0.0 && target_w > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target size must be positive, got {target_h}x{target_w}"
        )));
    }
    let sigma = cfg.sigma_factor * (target_h * target_w).sqrt();
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("label sigma {sigma}")));
    }
    let wrap = |i: usize, n: usize| -> f64 {
        let d = i.min(n - i) as f64;
        d * d
    };
    let denom = 2.0 * sigma * sigma;
    Plane::from_fn(cfg.height, cfg.width, |r, c| {
        (-(wrap(r, cfg.height) + wrap(c, cfg.width)) / denom).exp()
    })
}
