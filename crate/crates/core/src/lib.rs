//! Multi-channel correlation-filter tracking with channel distillation.
//!
//! A tracker learns a per-channel correlation filter by ridge regression in
//! the Fourier domain, ranks feature channels by spatial saliency and
//! temporal stability, and keeps only the subset that best predicts the
//! next frame.

pub mod bbox;
pub mod dcf;
pub mod distill;
pub mod error;
pub mod eval;
pub mod factorized;
pub mod features;
pub mod friendliness;
pub mod image;
pub mod labels;
pub mod sequence;
pub mod synth;
pub mod tensor;
pub mod tracker;

pub use bbox::BBox;
pub use dcf::{
    holdout_loss, locate, loss, response, solve_filter, ChannelSelection, FreqFilter,
    NormalEquations, ResponseMap, TrainingSet,
};
pub use distill::{
    alternate, distill, AlternateOutcome, DistillConfig, DistillOutcome, SelectionSearchState,
};
pub use error::{Error, Result};
pub use eval::{center_error, iou, precision_curve, success_curve, Summary, TrackResult};
pub use factorized::{distill_projected, pca_projection, project, Projection};
pub use features::{extract_patch, featurize, FeatureSpec, NoiseSpec, Patch, Provider};
pub use friendliness::{average_friendliness, prune_loop, FriendlinessReport, PruneConfig};
pub use image::Image;
pub use labels::{gaussian_label, LabelConfig};
pub use sequence::Sequence;
pub use synth::{generate_sequence, noisy_channel_provider, SynthSpec};
pub use tensor::{circ_correlate, dft2, idft2, ComplexPlane, FeatureMap, Plane};
pub use tracker::{track_frames, TrackOutput, TrackerConfig, TrackerState};
