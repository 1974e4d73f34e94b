//! Deterministic fixtures shared by the benchmarks.

use cdtrack::synth::{generate_sequence, noisy_channel_provider, SynthSpec};
use cdtrack::tensor::{FeatureMap, Plane};
use cdtrack::tracker::TrackerConfig;
use cdtrack::{BBox, FeatureSpec, Image, TrainingSet};

/// A smooth pseudo-random feature map; `salt` varies the content.
pub fn feature_map(d: usize, h: usize, w: usize, salt: usize) -> FeatureMap {
    let channels = (0..d)
        .map(|l| {
            let a = 0.37 + 0.11 * (l + salt) as f64;
            Plane::from_fn(h, w, |r, c| {
                ((r as f64 * a).sin() + (c as f64 * (a + 0.23)).cos() * (l + 1) as f64).tanh()
            })
            .expect("valid plane")
        })
        .collect();
    FeatureMap::new(channels).expect("valid map")
}

/// Two-sample training set with a centred Gaussian label.
pub fn training_set(d: usize, h: usize, w: usize) -> TrainingSet {
    let label = Plane::from_fn(h, w, |r, c| {
        let dr = r.min(h - r) as f64;
        let dc = c.min(w - c) as f64;
        (-(dr * dr + dc * dc) / 8.0).exp()
    })
    .expect("valid label");
    TrainingSet::new(
        vec![feature_map(d, h, w, 0), feature_map(d, h, w, 1)],
        label,
        1e-2,
    )
    .expect("valid training set")
}

/// Frames, initial box and a tracker config with `noise` extra channels.
pub fn tracking_fixture(frames: usize, noise: usize) -> (Vec<Image>, BBox, TrackerConfig) {
    let mut spec = SynthSpec::linear(frames, (160, 160), (24, 24), (1.0, 1.0), 11);
    spec.noise_channels = noise;
    spec.noise_sigma = 32.0;
    let (images, boxes) = generate_sequence(&spec).expect("synthetic sequence");
    let cfg = TrackerConfig {
        feature_spec: noisy_channel_provider(&FeatureSpec::gradhist(16, 4), &spec),
        ..TrackerConfig::default()
    };
    (images, boxes[0], cfg)
}
