use cdtrack::eval::{summarize, write_report, TrackResult};
use cdtrack::features::{extract_patch, featurize, load_feature_file, save_feature_file, FeatureSpec};
use cdtrack::sequence::{write_sequence, Sequence};
use cdtrack::synth::{generate_sequence, SynthSpec};
use cdtrack::tracker::{track_frames, TrackOutput, TrackerConfig};

fn spec() -> SynthSpec {
    SynthSpec::linear(12, (128, 128), (20, 20), (1.5, -1.0), 21)
}

#[test]
fn disk_sequence_tracks_like_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let (frames, gt) = generate_sequence(&spec()).unwrap();
    write_sequence(tmp.path(), &frames, &gt).unwrap();
    let seq = Sequence::open(tmp.path()).unwrap();
    assert_eq!(seq.len(), 12);
    assert_eq!(seq.groundtruth, gt);

    let cfg = TrackerConfig {
        target_channels: Some(4),
        ..TrackerConfig::default()
    };
    let from_disk =
        track_frames((0..seq.len()).map(|i| seq.load_frame(i)), gt[0], cfg.clone()).unwrap();
    let in_memory = track_frames(frames.into_iter().map(Ok), gt[0], cfg).unwrap();
    assert_eq!(from_disk.boxes, in_memory.boxes);
    assert_eq!(from_disk.channels_used, 4);

    let result = TrackResult::new(
        from_disk.boxes.clone(),
        gt,
        from_disk.timings.clone(),
        from_disk.channels_used,
    )
    .unwrap();
    let summary = write_report(tmp.path().join("report"), &[result.clone()]).unwrap();
    assert_eq!(summary, summarize(&[result]).unwrap());
    assert_eq!(summary.precision_at_20, 1.0);
    assert!(summary.auc > 0.5, "auc {}", summary.auc);

    let json = tmp.path().join("out.json");
    from_disk.save_json(&json).unwrap();
    assert_eq!(TrackOutput::load_json(&json).unwrap(), from_disk);
}

#[test]
fn precomputed_features_match_computed() {
    let tmp = tempfile::tempdir().unwrap();
    let (frames, gt) = generate_sequence(&spec()).unwrap();
    let computed = FeatureSpec {
        window: false,
        normalize: false,
        ..FeatureSpec::gradhist(6, 4)
    };
    let stem = tmp.path().join("feat");
    let file_spec = FeatureSpec {
        window: false,
        ..FeatureSpec::file(&stem)
    };
    for (i, f) in frames.iter().enumerate().take(3) {
        let mut p = extract_patch(f, &gt[0], 2.0, (64, 64)).unwrap();
        p.frame_index = i;
        let map = featurize(&p, &computed).unwrap();
        save_feature_file(FeatureSpec::file_path(&stem, i), &map).unwrap();
        // Files hold f32 samples.
        let loaded = load_feature_file(FeatureSpec::file_path(&stem, i)).unwrap();
        assert_eq!(featurize(&p, &file_spec).unwrap(), loaded);
        for (a, b) in loaded.channels().iter().zip(map.channels()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
            }
        }
    }
}

#[test]
fn config_json_round_trip_and_defaults() {
    let cfg = TrackerConfig {
        lambda: 0.05,
        projection_dim: 5,
        target_channels: Some(3),
        ..TrackerConfig::default()
    };
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<TrackerConfig>(&text).unwrap(), cfg);
    let partial: TrackerConfig = serde_json::from_str(r#"{"lambda": 0.2}"#).unwrap();
    assert_eq!(partial.lambda, 0.2);
    assert_eq!(partial.learning_rate, TrackerConfig::default().learning_rate);
}
