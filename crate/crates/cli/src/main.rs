//! `crashcast`: dataset statistics, synthetic clips, detector and forecaster
//! training, segment mining, evaluation and plots.

mod config;
mod plot;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use crashcast::data::{
    dataset_stats, find_video_dirs, make_splits, parse_annotations, synth_videos, VideoRecord,
};
use crashcast::detection::{train_detector, ContextKind, Detector};
use crashcast::evaluation::forecast::parse_curve_csv;
use crashcast::evaluation::threshold_grid;
use crashcast::forecasting::cache::{read_segments, write_segments};
use crashcast::forecasting::{train_forecaster, Forecaster, SegmentSample};
use crashcast::pipeline::{detection_samples, evaluate_detector, evaluate_forecaster, mine_all, VideoDir};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_OUT};
use crate::plot::Plot;

#[derive(Parser)]
#[command(name = "crashcast", version, about = "Traffic accident forecasting pipeline")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// TOML config file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "CRASHCAST_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// RoI context mining: none, cm or acm.
    #[arg(long, global = true, value_parser = parse_context)]
    pub context: Option<ContextKind>,
    /// Number of concentric contexts.
    #[arg(long, global = true)]
    pub nc: Option<usize>,
    /// Horizontal offset steps for the anisotropic grid.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Vertical offset steps for the anisotropic grid.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Context step in pixels.
    #[arg(long, global = true)]
    pub stride: Option<f64>,
    /// Area gate: mine boxes no larger than alpha times the image area.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Detector training iterations.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Forecaster training epochs.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Objects kept per frame for the forecaster.
    #[arg(long, global = true)]
    pub max_objects: Option<usize>,
    /// Recall at which time-to-accident is reported.
    #[arg(long, global = true)]
    pub recall_at: Option<f64>,
    /// Frame rate used for time-to-accident, overriding clip metadata.
    #[arg(long, global = true)]
    pub fps: Option<f64>,
    /// IoU threshold for a correct detection.
    #[arg(long, global = true)]
    pub iou: Option<f64>,
    /// Number of evenly spaced alarm thresholds.
    #[arg(long, global = true)]
    pub thresholds: Option<usize>,
}

fn parse_context(s: &str) -> Result<ContextKind, String> {
    s.parse().map_err(|e: crashcast::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics for annotation files or video directories.
    Stats {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Generate synthetic clips with exact annotations.
    Synth {
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train the detector on the trainval half of a video set.
    TrainDetector {
        /// Video root (default: <out>/videos).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// mAP of a detector checkpoint on the test half.
    EvalDetector {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory (default: <out>/detector).
        #[arg(long)]
        detector: Option<PathBuf>,
    },
    /// Cut 100-frame positive and negative segments with detector features.
    MineSegments {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        detector: Option<PathBuf>,
    },
    /// Train the forecaster on mined trainval segments.
    TrainForecaster {
        /// Segment directory (default: <out>/segments).
        #[arg(long)]
        segments: Option<PathBuf>,
    },
    /// AP, mean ToA and ToA at the target recall on test segments.
    EvalForecaster {
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Checkpoint directory (default: <out>/forecaster).
        #[arg(long)]
        forecaster: Option<PathBuf>,
    },
    /// Render precision-recall and ToA-recall curves to PNG.
    Plot {
        /// Curve CSV (default: <out>/forecast_curve.csv).
        #[arg(long)]
        curve: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Stats { .. } => "stats",
            Command::Synth { .. } => "synth",
            Command::TrainDetector { .. } => "train-detector",
            Command::EvalDetector { .. } => "eval-detector",
            Command::MineSegments { .. } => "mine-segments",
            Command::TrainForecaster { .. } => "train-forecaster",
            Command::EvalForecaster { .. } => "eval-forecaster",
            Command::Plot { .. } => "plot",
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    json: bool,
    overrides: Overrides,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// Prints `text`, or `value` as JSON (also saved as `<stem>.json`).
    fn report<T: Serialize>(&self, stem: &str, text: &str, value: &T) -> Result<()> {
        if self.json {
            let j = serde_json::to_string_pretty(value)?;
            self.write(&format!("{stem}.json"), &format!("{j}\n"))?;
            println!("{j}");
        } else {
            print!("{text}");
        }
        Ok(())
    }

    fn videos(&self, data: &Option<PathBuf>) -> Result<Vec<VideoDir>> {
        let root = data.clone().unwrap_or_else(|| self.path("videos"));
        if !root.exists() {
            bail!("no videos at {}; run `crashcast synth` or pass --data <dir>", root.display());
        }
        Ok(VideoDir::open_all(&root)?)
    }

    /// Video-level split, recomputed from the seed so every command agrees.
    fn split(&self, videos: Vec<VideoDir>) -> Result<(Vec<VideoDir>, Vec<VideoDir>)> {
        let records: Vec<VideoRecord> = videos.iter().map(|v| v.record.clone()).collect();
        let plan = make_splits(&records, self.cfg.seed)?;
        let (mut trainval, mut test) = (Vec::new(), Vec::new());
        for v in videos {
            if plan.trainval.contains(&v.record.id) {
                trainval.push(v);
            } else {
                test.push(v);
            }
        }
        Ok((trainval, test))
    }

    fn detector(&self, dir: &Option<PathBuf>) -> Result<Detector> {
        let dir = dir.clone().unwrap_or_else(|| self.path("detector"));
        if !dir.exists() {
            bail!("no detector checkpoint at {}; run `crashcast train-detector` first", dir.display());
        }
        let mut det =
            Detector::load(&dir).with_context(|| format!("loading detector from {}", dir.display()))?;
        // context flags apply to a loaded model too
        let o = &self.overrides;
        if o.context.is_some()
            || o.nc.is_some()
            || o.m.is_some()
            || o.n.is_some()
            || o.stride.is_some()
            || o.alpha.is_some()
        {
            det.config.context = self.cfg.detector.context;
        }
        Ok(det)
    }

    fn segments(&self, dir: &Option<PathBuf>, split: &str) -> Result<Vec<SegmentSample>> {
        let dir = dir.clone().unwrap_or_else(|| self.path("segments"));
        let file = dir.join(format!("{split}.cbor"));
        if !file.exists() {
            bail!("no segment cache at {}; run `crashcast mine-segments` first", file.display());
        }
        Ok(read_segments(&file)?)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.overrides.config.as_deref())?;
    cfg.apply(&cli.overrides);
    cfg.validate()?;
    let out = cli.overrides.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { cfg, out, json: cli.overrides.json, overrides: cli.overrides };
    let mut cmd = cli.command;
    if let Command::Synth { videos, frames } = &cmd {
        let mut cfg = ctx.cfg.clone();
        if let Some(v) = videos {
            cfg.videos = *v;
        }
        if let Some(f) = frames {
            cfg.synth.frames = *f;
        }
        cfg.validate()?;
        cfg.snapshot(&ctx.out, cmd.name())?;
        return synth(&Ctx { cfg, ..ctx });
    }
    ctx.cfg.snapshot(&ctx.out, cmd.name())?;
    match &mut cmd {
        Command::Stats { paths } => stats(&ctx, paths),
        Command::Synth { .. } => unreachable!(),
        Command::TrainDetector { data } => cmd_train_detector(&ctx, data),
        Command::EvalDetector { data, detector } => cmd_eval_detector(&ctx, data, detector),
        Command::MineSegments { data, detector } => cmd_mine(&ctx, data, detector),
        Command::TrainForecaster { segments } => cmd_train_forecaster(&ctx, segments),
        Command::EvalForecaster { segments, forecaster } => cmd_eval_forecaster(&ctx, segments, forecaster),
        Command::Plot { curve } => cmd_plot(&ctx, curve),
    }
}

fn load_records(path: &Path) -> Result<Vec<VideoRecord>> {
    if path.is_file() || path.join(crashcast::data::annotations::ANNOTATION_FILE).is_file() {
        return Ok(vec![parse_annotations(path)?]);
    }
    if !path.exists() {
        bail!("{} does not exist", path.display());
    }
    let dirs = find_video_dirs(path)?;
    if dirs.is_empty() {
        bail!("no annotations found under {}", path.display());
    }
    dirs.iter().map(|d| Ok(parse_annotations(d)?)).collect()
}

fn stats(ctx: &Ctx, paths: &[PathBuf]) -> Result<()> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(load_records(p)?);
    }
    let s = dataset_stats(&records);
    let text = s.to_text();
    ctx.write("stats.txt", &text)?;
    ctx.write("stats.toml", &s.to_toml())?;
    ctx.report("stats", &text, &s)
}

fn synth(ctx: &Ctx) -> Result<()> {
    let videos = synth_videos(ctx.cfg.videos, ctx.cfg.seed, &ctx.cfg.synth)?;
    let root = ctx.path("videos");
    for v in &videos {
        v.write(&root.join(&v.record.id))?;
    }
    let records: Vec<VideoRecord> = videos.iter().map(|v| v.record.clone()).collect();
    let plan = make_splits(&records, ctx.cfg.seed)?;
    ctx.write("splits.toml", &plan.to_toml())?;
    println!("wrote {} videos to {}", videos.len(), root.display());
    Ok(())
}

fn cmd_train_detector(ctx: &Ctx, data: &Option<PathBuf>) -> Result<()> {
    let (trainval, _) = ctx.split(ctx.videos(data)?)?;
    let samples = detection_samples(&trainval, ctx.cfg.train_frame_step)?;
    log::info!("training detector on {} frames", samples.len());
    let (det, trace) = train_detector(&samples, ctx.cfg.detector.clone())?;
    let dir = ctx.path("detector");
    det.save(&dir)?;
    ctx.write("detector_loss.csv", &trace.to_csv())?;
    println!(
        "detector trained for {} iterations on {} frames; checkpoint at {}",
        trace.records.len(),
        samples.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_eval_detector(ctx: &Ctx, data: &Option<PathBuf>, detector: &Option<PathBuf>) -> Result<()> {
    let det = ctx.detector(detector)?;
    let (_, test) = ctx.split(ctx.videos(data)?)?;
    let samples = detection_samples(&test, ctx.cfg.eval_frame_step)?;
    let report = evaluate_detector(&det, &samples, ctx.cfg.iou)?;
    let text = report.to_text();
    ctx.write("detection.txt", &text)?;
    ctx.write("detection.toml", &report.to_toml())?;
    ctx.report("detection", &text, &report)
}

fn cmd_mine(ctx: &Ctx, data: &Option<PathBuf>, detector: &Option<PathBuf>) -> Result<()> {
    let det = ctx.detector(detector)?;
    let (trainval, test) = ctx.split(ctx.videos(data)?)?;
    let k = ctx.cfg.forecaster.max_objects;
    let dir = ctx.path("segments");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut warnings = Vec::new();
    for (name, videos, seed) in
        [("trainval", &trainval, ctx.cfg.seed), ("test", &test, ctx.cfg.seed ^ 0x7e57)]
    {
        let mined = mine_all(&det, videos, k, seed)?;
        write_segments(&dir.join(format!("{name}.cbor")), &mined.samples)?;
        println!("{name}: {} segments", mined.samples.len());
        warnings.extend(mined.warnings);
    }
    let mut body = warnings.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    std::fs::write(dir.join("warnings.txt"), body).context("writing segment warnings")?;
    Ok(())
}

fn cmd_train_forecaster(ctx: &Ctx, segments: &Option<PathBuf>) -> Result<()> {
    let train = ctx.segments(segments, "trainval")?;
    let (model, trace) = train_forecaster(&train, ctx.cfg.forecaster.clone())?;
    let dir = ctx.path("forecaster");
    model.save(&dir)?;
    ctx.write("forecaster_loss.csv", &trace.to_csv())?;
    println!(
        "forecaster trained for {} epochs on {} segments; checkpoint at {}",
        ctx.cfg.forecaster.epochs,
        train.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_eval_forecaster(ctx: &Ctx, segments: &Option<PathBuf>, forecaster: &Option<PathBuf>) -> Result<()> {
    let dir = forecaster.clone().unwrap_or_else(|| ctx.path("forecaster"));
    if !dir.exists() {
        bail!("no forecaster checkpoint at {}; run `crashcast train-forecaster` first", dir.display());
    }
    let model =
        Forecaster::load(&dir).with_context(|| format!("loading forecaster from {}", dir.display()))?;
    let mut test = ctx.segments(segments, "test")?;
    if let Some(fps) = ctx.cfg.fps {
        for s in &mut test {
            s.fps = fps;
        }
    }
    let report =
        evaluate_forecaster(&model, &test, &threshold_grid(ctx.cfg.thresholds), ctx.cfg.recall_target)?;
    let text = report.to_text();
    ctx.write("forecast.txt", &text)?;
    ctx.write("forecast.toml", &report.to_toml())?;
    ctx.write("forecast_curve.csv", &report.curve_csv())?;
    ctx.report("forecast", &text, &report)
}

fn cmd_plot(ctx: &Ctx, curve: &Option<PathBuf>) -> Result<()> {
    let path = curve.clone().unwrap_or_else(|| ctx.path("forecast_curve.csv"));
    if !path.exists() {
        bail!("no curve at {}; run `crashcast eval-forecaster` first", path.display());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut points = parse_curve_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    points.sort_by(|a, b| a.recall.total_cmp(&b.recall).then(b.precision.total_cmp(&a.precision)));

    let pr: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.recall > 0.0 || p.precision > 0.0)
        .map(|p| (p.recall, p.precision))
        .collect();
    let toa: Vec<(f64, f64)> = points.iter().filter_map(|p| p.mean_toa.map(|t| (p.recall, t))).collect();
    let toa_max = toa.iter().map(|p| p.1).fold(0.0, f64::max);

    let dir = ctx.path("plots");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut p = Plot::new(1.0, 1.0);
    p.series(&pr);
    p.save(&dir.join("precision_recall.png"))?;
    let mut t = Plot::new(1.0, if toa_max > 0.0 { toa_max * 1.1 } else { 1.0 });
    t.series(&toa);
    t.save(&dir.join("toa_recall.png"))?;
    println!("plots written to {}", dir.display());
    Ok(())
}
