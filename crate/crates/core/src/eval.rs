//! Precision and success metrics.
//!
//! Precision uses `error <= t` for `t = 0, 1, ..., 50` pixels and is
//! reported at 20. Success uses `IoU > t` on 101 thresholds `0, 0.01, ...,
//! 1` (both endpoints included); AUC is the mean of that curve.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};

pub const PRECISION_THRESHOLDS: usize = 51;
pub const PRECISION_AT: usize = 20;
pub const SUCCESS_THRESHOLDS: usize = 101;

pub fn center_error(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub boxes: Vec<BBox>,
    pub gt: Vec<BBox>,
    pub timings: Vec<f64>,
    pub channels_used: usize,
}

impl TrackResult {
    /// Checks equal lengths and that the first prediction is the first
    /// ground-truth box.
    pub fn new(
        boxes: Vec<BBox>,
        gt: Vec<BBox>,
        timings: Vec<f64>,
        channels_used: usize,
    ) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::NotEnoughFrames { needed: 1, got: 0 });
        }
        if boxes.len() != gt.len() || boxes.len() != timings.len() {
            return Err(Error::InvalidParameter(format!(
                "lengths differ: {} boxes, {} gt, {} timings",
                boxes.len(),
                gt.len(),
                timings.len()
            )));
        }
        if boxes[0] != gt[0] {
            return Err(Error::InvalidParameter(
                "first predicted box must equal the first ground-truth box".into(),
            ));
        }
        Ok(Self {
            boxes,
            gt,
            timings,
            channels_used,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn center_errors(&self) -> Vec<f64> {
        self.boxes
            .iter()
            .zip(&self.gt)
            .map(|(a, b)| center_error(a, b))
            .collect()
    }

    pub fn overlaps(&self) -> Vec<f64> {
        self.boxes
            .iter()
            .zip(&self.gt)
            .map(|(a, b)| iou(a, b))
            .collect()
    }

    /// Frames per second over all timed frames.
    pub fn fps(&self) -> f64 {
        let total: f64 = self.timings.iter().sum();
        if total > 0.0 {
            self.timings.len() as f64 / total
        } else {
            f64::INFINITY
        }
    }
}

fn fraction(values: &[f64], pass: impl Fn(f64) -> bool) -> f64 {
    values.iter().filter(|&&v| pass(v)).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl PrecisionCurve {
    pub fn score(&self) -> f64 {
        self.values[PRECISION_AT]
    }
}

pub fn precision_curve(r: &TrackResult) -> PrecisionCurve {
    let errors = r.center_errors();
    let thresholds: Vec<f64> = (0..PRECISION_THRESHOLDS).map(|t| t as f64).collect();
    let values = thresholds
        .iter()
        .map(|&t| fraction(&errors, |e| e <= t))
        .collect();
    PrecisionCurve { thresholds, values }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl SuccessCurve {
    pub fn auc(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn success_curve(r: &TrackResult) -> SuccessCurve {
    let overlaps = r.overlaps();
    let thresholds: Vec<f64> = (0..SUCCESS_THRESHOLDS).map(|i| i as f64 / 100.0).collect();
    let values = thresholds
        .iter()
        .map(|&t| fraction(&overlaps, |o| o > t))
        .collect();
    SuccessCurve { thresholds, values }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision_at_20: f64,
    pub auc: f64,
    pub fps: f64,
    pub mean_channels: f64,
    pub frames: usize,
}

/// Scores for several results; frames are pooled, channels averaged over
/// results.
pub fn summarize(results: &[TrackResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::NotEnoughFrames { needed: 1, got: 0 });
    }
    let pooled = TrackResult {
        boxes: results.iter().flat_map(|r| r.boxes.clone()).collect(),
        gt: results.iter().flat_map(|r| r.gt.clone()).collect(),
        timings: results.iter().flat_map(|r| r.timings.clone()).collect(),
        channels_used: 0,
    };
    Ok(Summary {
        precision_at_20: precision_curve(&pooled).score(),
        auc: success_curve(&pooled).auc(),
        fps: pooled.fps(),
        mean_channels: results.iter().map(|r| r.channels_used as f64).sum::<f64>()
            / results.len() as f64,
        frames: pooled.len(),
    })
}

/// `threshold,precision,success` rows. Precision is defined on whole pixels
/// and success on `[0, 1]`, so each row carries one of them and leaves the
/// other empty.
pub fn curves_csv(p: &PrecisionCurve, s: &SuccessCurve) -> String {
    let mut out = String::from("threshold,precision,success\n");
    for (t, v) in p.thresholds.iter().zip(&p.values) {
        let _ = writeln!(out, "{t},{v},");
    }
    for (t, v) in s.thresholds.iter().zip(&s.values) {
        let _ = writeln!(out, "{t},,{v}");
    }
    out
}

/// Writes `curves.csv` and `summary.json` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, results: &[TrackResult]) -> Result<Summary> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = summarize(results)?;
    let pooled = TrackResult {
        boxes: results.iter().flat_map(|r| r.boxes.clone()).collect(),
        gt: results.iter().flat_map(|r| r.gt.clone()).collect(),
        timings: Vec::new(),
        channels_used: 0,
    };
    let csv = curves_csv(&precision_curve(&pooled), &success_curve(&pooled));
    let csv_path = dir.join("curves.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("summary.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)
        .map_err(|e| Error::io(&json_path, e))?;
    Ok(summary)
}
