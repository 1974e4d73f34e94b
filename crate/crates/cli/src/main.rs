use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cdtrack::distill::{distill, DistillConfig};
use cdtrack::eval::{write_report, TrackResult};
use cdtrack::sequence::{write_sequence, Sequence};
use cdtrack::synth::{generate_sequence, SynthSpec};
use cdtrack::tracker::{track_frames, TrackOutput, TrackerConfig, TrackerState};
use cdtrack::TrainingSet;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdtrack", version, about = "Correlation-filter tracking with channel distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a sequence directory and write per-frame results as JSON.
    Track {
        #[arg(long)]
        seq: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score tracking results against a sequence's ground truth.
    Eval {
        /// results.json written by `track`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        /// Directory for curves.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Channel friendliness and distillation trace on the first two frames.
    DistillStudy {
        #[arg(long)]
        seq: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory for friendliness.csv, loss_trace.csv and prune.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic sequence directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        /// Frame size as HxW.
        #[arg(long, default_value = "160x160", value_parser = parse_size)]
        size: (usize, usize),
        /// Object size as HxW.
        #[arg(long, default_value = "24x24", value_parser = parse_size)]
        object: (usize, usize),
        /// Per-frame displacement as DX,DY.
        #[arg(long, default_value = "1,1", value_parser = parse_step, allow_hyphen_values = true)]
        step: (f64, f64),
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Tracker configuration (JSON); missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Label sigma as a fraction of the target size.
    #[arg(long)]
    label_sigma: Option<f64>,
    /// Projected channel count; 0 disables the projection.
    #[arg(long)]
    projection_dim: Option<usize>,
    /// Fixed number of distilled channels.
    #[arg(long)]
    channels: Option<usize>,
    /// Track with every channel.
    #[arg(long)]
    no_distill: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrackerConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrackerConfig::default(),
        };
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.label_sigma {
            cfg.label_sigma_factor = v;
        }
        if let Some(v) = self.projection_dim {
            cfg.projection_dim = v;
        }
        if let Some(v) = self.channels {
            cfg.target_channels = Some(v);
        }
        if self.no_distill {
            cfg.distill = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW")?;
    Ok((
        h.trim().parse().map_err(|e| format!("{e}"))?,
        w.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn parse_step(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected DX,DY")?;
    Ok((
        x.trim().parse().map_err(|e| format!("{e}"))?,
        y.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn open_sequence(dir: &Path) -> Result<Sequence> {
    let seq = Sequence::open(dir).with_context(|| format!("opening sequence {}", dir.display()))?;
    ensure!(!seq.is_empty(), "sequence {} has no frames", dir.display());
    ensure!(
        !seq.groundtruth.is_empty(),
        "sequence {} has no ground truth",
        dir.display()
    );
    Ok(seq)
}

fn track(seq_dir: &Path, cfg: TrackerConfig, out: &Path) -> Result<()> {
    let seq = open_sequence(seq_dir)?;
    let result = track_frames((0..seq.len()).map(|i| seq.load_frame(i)), seq.groundtruth[0], cfg)?;
    result.save_json(out)?;
    let total: f64 = result.timings.iter().sum();
    println!(
        "tracked {} frames with {}/{} channels, {:.1} fps",
        result.boxes.len(),
        result.channels_used,
        result.total_channels,
        result.boxes.len() as f64 / total.max(f64::MIN_POSITIVE)
    );
    Ok(())
}

fn eval(results: &Path, seq_dir: &Path, out: &Path) -> Result<()> {
    let run = TrackOutput::load_json(results)?;
    let seq = open_sequence(seq_dir)?;
    if run.boxes.len() > seq.groundtruth.len() {
        bail!(
            "{} predicted boxes but only {} ground-truth boxes",
            run.boxes.len(),
            seq.groundtruth.len()
        );
    }
    let gt = seq.groundtruth[..run.boxes.len()].to_vec();
    let result = TrackResult::new(run.boxes, gt, run.timings, run.channels_used)?;
    let summary = write_report(out, &[result])?;
    println!(
        "precision@20 {:.3}, auc {:.3}, {:.1} fps, {} channels",
        summary.precision_at_20, summary.auc, summary.fps, summary.mean_channels
    );
    Ok(())
}

fn distill_study(seq_dir: &Path, cfg: TrackerConfig, out: &Path) -> Result<()> {
    let seq = open_sequence(seq_dir)?;
    ensure!(seq.len() >= 2, "distillation needs two frames");
    let gt0 = seq.groundtruth[0];
    let state = TrackerState::init(&seq.load_frame(0)?, gt0, cfg.clone())?;
    let f1 = state.history()[0].clone();
    let f2 = state.features(&seq.load_frame(1)?, &gt0, 1)?;
    let pair = vec![f1, f2];
    let ts = TrainingSet::new(pair.clone(), state.label().clone(), cfg.lambda)?;
    let dcfg = DistillConfig {
        prune: cfg.prune,
        max_rounds: cfg.max_rounds,
        target_channels: cfg.target_channels,
    };
    let outcome = distill(&ts, &pair, &dcfg)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report = &outcome.report;
    let rank = report.rank_of();
    let mut csv = String::from("channel,spatial,temporal,friendliness,rank,selected\n");
    for l in 0..report.channel_count() {
        let _ = writeln!(
            csv,
            "{l},{},{},{},{},{}",
            report.per_channel_spatial[l],
            report.per_channel_temporal[l],
            report.per_channel_friendliness[l],
            rank[l],
            u8::from(outcome.selection.contains(l))
        );
    }
    fs::write(out.join("friendliness.csv"), csv)?;

    let mut trace = String::from("step,kind,loss\n");
    for (i, l) in outcome.loss_trace.iter().enumerate() {
        let kind = if i % 2 == 0 { "solve" } else { "swap" };
        let _ = writeln!(trace, "{i},{kind},{l}");
    }
    fs::write(out.join("loss_trace.csv"), trace)?;

    if let Some(prune) = &outcome.prune {
        let mut rows = String::from("channels,holdout_loss\n");
        for (c, l) in &prune.visited {
            let _ = writeln!(rows, "{c},{l}");
        }
        fs::write(out.join("prune.csv"), rows)?;
    }
    println!(
        "kept {} of {} channels: {:?}",
        outcome.selection.count(),
        outcome.selection.len(),
        outcome.selection.indices()
    );
    Ok(())
}

fn synth(
    out: &Path,
    frames: usize,
    size: (usize, usize),
    object: (usize, usize),
    step: (f64, f64),
    seed: u64,
) -> Result<()> {
    let spec = SynthSpec::linear(frames, size, object, step, seed);
    let (images, boxes) = generate_sequence(&spec)?;
    write_sequence(out, &images, &boxes)?;
    println!("wrote {} frames to {}", images.len(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Track { seq, config, out } => track(&seq, config.load()?, &out),
        Command::Eval { results, seq, out } => eval(&results, &seq, &out),
        Command::DistillStudy { seq, config, out } => distill_study(&seq, config.load()?, &out),
        Command::Synth {
            out,
            frames,
            size,
            object,
            step,
            seed,
        } => synth(&out, frames, size, object, step, seed),
    }
}
