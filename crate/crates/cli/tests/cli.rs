use std::path::Path;
use std::process::Command;

fn cdtrack(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_cdtrack"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "cdtrack {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, step: &str) {
    cdtrack(&[
        "synth", "--out", s(dir), "--frames", "8", "--size", "96x96", "--object", "16x16",
        "--step", step, "--seed", "5",
    ]);
}

#[test]
fn synth_track_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "2,-1");
    assert!(seq.join("img/0001.png").exists());
    assert_eq!(
        std::fs::read_to_string(seq.join("groundtruth.txt")).unwrap().lines().count(),
        8
    );

    let results = tmp.path().join("results.json");
    cdtrack(&["track", "--seq", s(&seq), "--out", s(&results), "--channels", "4"]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(json["boxes"].as_array().unwrap().len(), 8);
    assert_eq!(json["channels_used"], 4);
    assert_eq!(json["timings"].as_array().unwrap().len(), 8);

    let report = tmp.path().join("report");
    cdtrack(&["eval", "--results", s(&results), "--seq", s(&seq), "--out", s(&report)]);
    let csv = std::fs::read_to_string(report.join("curves.csv")).unwrap();
    assert!(csv.starts_with("threshold,precision,success\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("summary.json")).unwrap())
            .unwrap();
    for key in ["precision_at_20", "auc", "fps", "mean_channels"] {
        assert!(summary[key].is_number(), "{key} missing");
    }
    assert_eq!(summary["precision_at_20"], 1.0);
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "0,0");
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"distill": false, "feature_spec": {"provider": {"kind": "grad_hist", "bins": 5},
            "cell_size": 4, "window": true, "normalize": true}}"#,
    )
    .unwrap();
    let results = tmp.path().join("r.json");
    cdtrack(&[
        "track", "--seq", s(&seq), "--config", s(&cfg), "--out", s(&results), "--lambda",
        "0.1", "--projection-dim", "3",
    ]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(json["total_channels"], 3);
    assert_eq!(json["channels_used"], 3);
}

#[test]
fn distill_study_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "1,1");
    let out = tmp.path().join("study");
    cdtrack(&["distill-study", "--seq", s(&seq), "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("friendliness.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "channel,spatial,temporal,friendliness,rank,selected"
    );
    assert_eq!(lines.count(), 9);
    let trace = std::fs::read_to_string(out.join("loss_trace.csv")).unwrap();
    let losses: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!losses.is_empty());
    assert!(losses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert!(out.join("prune.csv").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_cdtrack"))
        .args(["track", "--seq", s(&tmp.path().join("missing")), "--out", "x.json"])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("missing"));

    let escape = Command::new(env!("CARGO_BIN_EXE_cdtrack"))
        .args([
            "synth", "--out", s(&tmp.path().join("x")), "--frames", "50", "--size", "40x40",
            "--object", "10x10", "--step", "3,0",
        ])
        .output()
        .unwrap();
    assert!(!escape.status.success());
}
