//! Online tracker: initialize on frame 1, distill on frames 1-2, then
//! locate and update on every following frame.
//!
//! The model is a running average of per-bin normal equations. After `n`
//! frames the filter equals a batch solve with weights `(1-η)^(n-1)` for
//! the first sample and `η(1-η)^(n-i)` for sample `i > 1`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::dcf::{
    locate, peak, response_from_spectra, ChannelSelection, FreqFilter, NormalEquations,
    ResponseMap, TrainingSet, DEFAULT_LAMBDA,
};
use crate::distill::{distill, DistillConfig, DEFAULT_MAX_ROUNDS};
use crate::error::{Error, Result};
use crate::factorized::{pca_projection, project, Projection};
use crate::features::{extract_patch, featurize, FeatureSpec, DEFAULT_OUT_SIZE, DEFAULT_PADDING};
use crate::friendliness::PruneConfig;
use crate::image::Image;
use crate::labels::{gaussian_label, LabelConfig};
use crate::tensor::{dft2, ComplexPlane, FeatureMap, Plane};

pub const DEFAULT_LEARNING_RATE: f64 = 0.015;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub feature_spec: FeatureSpec,
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_rounds: usize,
    pub label_sigma_factor: f64,
    /// 0 disables the projection.
    pub projection_dim: usize,
    pub distill: bool,
    /// Fixed number of channels kept by distillation; `None` lets the
    /// pruning loop decide.
    pub target_channels: Option<usize>,
    pub prune: PruneConfig,
    pub padding: f64,
    /// `(height, width)` of the resampled patch in pixels.
    pub out_size: (usize, usize),
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            feature_spec: FeatureSpec::default(),
            lambda: DEFAULT_LAMBDA,
            learning_rate: DEFAULT_LEARNING_RATE,
            max_rounds: DEFAULT_MAX_ROUNDS,
            label_sigma_factor: LabelConfig::DEFAULT_SIGMA_FACTOR,
            projection_dim: 0,
            distill: true,
            target_channels: None,
            prune: PruneConfig::default(),
            padding: DEFAULT_PADDING,
            out_size: DEFAULT_OUT_SIZE,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.feature_spec.validate()?;
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must lie in [0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda {}", self.lambda)));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidParameter(
                "max_rounds must be at least 1".into(),
            ));
        }
        if self.target_channels == Some(0) {
            return Err(Error::InvalidParameter(
                "target_channels must be positive".into(),
            ));
        }
        Ok(())
    }

    fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            prune: self.prune,
            max_rounds: self.max_rounds,
            target_channels: self.target_channels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    cfg: TrackerConfig,
    selection: ChannelSelection,
    filter: FreqFilter,
    accum: NormalEquations,
    current_box: BBox,
    /// 1-based index of the last processed frame.
    frame_index: usize,
    projection: Option<Projection>,
    history: Vec<FeatureMap>,
    label: Plane,
    label_hat: ComplexPlane,
}

/// Outcome of one tracking step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub bbox: BBox,
    pub response: ResponseMap,
    /// Peak position on the feature grid, wrapped to signed offsets.
    pub offset: (isize, isize),
    pub peak_value: f64,
}

impl TrackerState {
    pub fn init(frame: &Image, bbox: BBox, cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        if bbox.is_degenerate() {
            return Err(Error::DegenerateBox {
                w: bbox.w,
                h: bbox.h,
            });
        }
        let raw = raw_features(frame, &bbox, &cfg, 0)?;
        let projection = if cfg.projection_dim > 0 {
            Some(pca_projection(
                std::slice::from_ref(&raw),
                cfg.projection_dim,
            )?)
        } else {
            None
        };
        let f1 = match &projection {
            Some(p) => project(&raw, p)?,
            None => raw,
        };
        let (gh, gw) = f1.dims();
        let label = gaussian_label(
            &LabelConfig::new(cfg.label_sigma_factor, gh, gw)?,
            gh as f64 / cfg.padding,
            gw as f64 / cfg.padding,
        )?;
        let label_hat = dft2(&label);
        let selection = ChannelSelection::full(f1.channel_count());
        let accum = accumulators(&f1, &selection, &label_hat, 1.0);
        let filter = solve(&accum, &selection, cfg.lambda)?;
        Ok(Self {
            cfg,
            selection,
            filter,
            accum,
            current_box: bbox,
            frame_index: 1,
            projection,
            history: vec![f1],
            label,
            label_hat,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn selection(&self) -> &ChannelSelection {
        &self.selection
    }

    pub fn filter(&self) -> &FreqFilter {
        &self.filter
    }

    pub fn accumulators(&self) -> &NormalEquations {
        &self.accum
    }

    pub fn current_box(&self) -> BBox {
        self.current_box
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn projection(&self) -> Option<&Projection> {
        self.projection.as_ref()
    }

    pub fn history(&self) -> &[FeatureMap] {
        &self.history
    }

    pub fn label(&self) -> &Plane {
        &self.label
    }

    /// Peak of the current filter's response on the newest stored sample.
    pub fn self_response_peak(&self) -> Result<f64> {
        let f = self.history.last().expect("history holds the first frame");
        let r = crate::dcf::response(f, &self.filter, &self.selection)?;
        Ok(peak(&r).2)
    }

    /// Features of `frame` at `bbox`, projected if the tracker projects.
    pub fn features(&self, frame: &Image, bbox: &BBox, frame_index: usize) -> Result<FeatureMap> {
        let raw = raw_features(frame, bbox, &self.cfg, frame_index)?;
        match &self.projection {
            Some(p) => project(&raw, p),
            None => Ok(raw),
        }
    }

    /// Locates the object in `frame`, moves the box, distills on the second
    /// frame if enabled, and updates the model.
    pub fn step(&mut self, frame: &Image) -> Result<StepOutput> {
        let n = self.frame_index + 1;
        let f = self.features(frame, &self.current_box, n - 1)?;
        let idx = self.selection.indices();
        let spectra: Vec<ComplexPlane> = idx.iter().map(|&l| dft2(f.channel(l))).collect();
        let spec_refs: Vec<&ComplexPlane> = spectra.iter().collect();
        let planes: Vec<&ComplexPlane> = self.filter.planes().iter().collect();
        let response = response_from_spectra(&spec_refs, &planes)?;
        let offset = locate(&response);
        let (_, _, peak_value) = peak(&response);

        let (gh, gw) = f.dims();
        let b = self.current_box;
        let sy = b.h * self.cfg.padding / gh as f64;
        let sx = b.w * self.cfg.padding / gw as f64;
        let moved = b
            .translate(offset.1 as f64 * sx, offset.0 as f64 * sy)
            .clamp_center(frame.width(), frame.height());
        self.current_box = moved;

        let sample = if moved == b {
            f.clone()
        } else {
            self.features(frame, &moved, n - 1)?
        };
        let first = self.history[0].clone();
        if self.history.len() == 2 {
            self.history.remove(0);
        }
        self.history.push(sample.clone());

        if n == 2 && self.cfg.distill {
            // Both frames are featurized at the frame-1 box, so the pair
            // measures how each channel changes at a fixed location.
            let pair = vec![first, f];
            let ts = TrainingSet::new(pair.clone(), self.label.clone(), self.cfg.lambda)?;
            let out = distill(&ts, &pair, &self.cfg.distill_config())?;
            self.selection = out.selection;
            self.accum = accumulators(&pair[0], &self.selection, &self.label_hat, 1.0);
        }
        let update = accumulators(&sample, &self.selection, &self.label_hat, 1.0);
        self.accum.blend(&update, self.cfg.learning_rate)?;
        self.filter = solve(&self.accum, &self.selection, self.cfg.lambda)?;
        self.frame_index = n;
        Ok(StepOutput {
            bbox: moved,
            response,
            offset,
            peak_value,
        })
    }
}

fn raw_features(
    frame: &Image,
    bbox: &BBox,
    cfg: &TrackerConfig,
    frame_index: usize,
) -> Result<FeatureMap> {
    let mut patch = extract_patch(frame, bbox, cfg.padding, cfg.out_size)?;
    patch.frame_index = frame_index;
    featurize(&patch, &cfg.feature_spec)
}

fn accumulators(
    f: &FeatureMap,
    sel: &ChannelSelection,
    label_hat: &ComplexPlane,
    weight: f64,
) -> NormalEquations {
    let spectra: Vec<ComplexPlane> = sel.indices().iter().map(|&l| dft2(f.channel(l))).collect();
    let refs: Vec<&ComplexPlane> = spectra.iter().collect();
    NormalEquations::from_sample(&refs, label_hat, weight)
}

fn solve(accum: &NormalEquations, sel: &ChannelSelection, lambda: f64) -> Result<FreqFilter> {
    let c = sel.count();
    let planes = accum.solve(lambda / c as f64)?;
    FreqFilter::new(planes, sel.indices())
}

/// Per-frame tracker output for a whole sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub boxes: Vec<BBox>,
    pub peak_values: Vec<f64>,
    /// Seconds spent on each frame; the first entry is initialization.
    pub timings: Vec<f64>,
    pub channels_used: usize,
    pub total_channels: usize,
}

impl TrackOutput {
    pub fn save_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Tracks `frames` starting from `init_box` on the first frame.
pub fn track_frames<I>(frames: I, init_box: BBox, cfg: TrackerConfig) -> Result<TrackOutput>
where
    I: IntoIterator<Item = Result<Image>>,
{
    let mut iter = frames.into_iter();
    let first = iter
        .next()
        .ok_or(Error::NotEnoughFrames { needed: 1, got: 0 })??;
    let t0 = Instant::now();
    let mut state = TrackerState::init(&first, init_box, cfg)?;
    let total_channels = state.selection.len();
    let mut out = TrackOutput {
        boxes: vec![init_box],
        peak_values: vec![state.self_response_peak()?],
        timings: vec![t0.elapsed().as_secs_f64()],
        channels_used: total_channels,
        total_channels,
    };
    for frame in iter {
        let frame = frame?;
        let t = Instant::now();
        let step = state.step(&frame)?;
        out.timings.push(t.elapsed().as_secs_f64());
        out.boxes.push(step.bbox);
        out.peak_values.push(step.peak_value);
    }
    out.channels_used = state.selection.count();
    Ok(out)
}
