//! Glue between stages: frame sources, detector samples, per-frame
//! forecaster features and a one-call synthetic run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    find_video_dirs, frame_path, make_splits, parse_annotations, synth_videos, SynthConfig, SyntheticVideo,
    VideoRecord,
};
use crate::detection::{train_detector, DetectionSample, Detector, DetectorConfig, LossTrace};
use crate::error::{Error, Result};
use crate::evaluation::{
    detection_map, forecast_curve_eval, threshold_grid, DetectionReport, ForecastReport, PositiveCurve,
};
use crate::forecasting::{
    build_segment, plan_segments, train_forecaster, ForecastLossTrace, Forecaster, ForecasterConfig, Label,
    MinedSegments, SegmentFrame, SegmentSample,
};

/// Anything that yields an annotated clip's frames.
pub trait FrameSource: Sync {
    fn record(&self) -> &VideoRecord;
    fn frame(&self, index: usize) -> Result<RgbImage>;
}

impl FrameSource for SyntheticVideo {
    fn record(&self) -> &VideoRecord {
        &self.record
    }

    fn frame(&self, index: usize) -> Result<RgbImage> {
        Ok(SyntheticVideo::frame(self, index))
    }
}

/// A video directory on disk: annotations plus `frames/NNNNNN.png`.
#[derive(Debug, Clone)]
pub struct VideoDir {
    pub dir: PathBuf,
    pub record: VideoRecord,
}

impl VideoDir {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self { dir: dir.to_path_buf(), record: parse_annotations(dir)? })
    }

    /// Every video under `root`, sorted by directory name.
    pub fn open_all(root: &Path) -> Result<Vec<Self>> {
        let dirs = find_video_dirs(root)?;
        if dirs.is_empty() {
            return Err(Error::invalid(format!("no annotations found under {}", root.display())));
        }
        dirs.iter().map(|d| Self::open(d)).collect()
    }
}

impl FrameSource for VideoDir {
    fn record(&self) -> &VideoRecord {
        &self.record
    }

    fn frame(&self, index: usize) -> Result<RgbImage> {
        let p = frame_path(&self.dir, index);
        let img = image::open(&p).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(p.display().to_string(), io),
            other => Error::Image(other),
        })?;
        Ok(img.to_rgb8())
    }
}

/// Every `every`-th frame of each video with its non-lost boxes.
pub fn detection_samples<S: FrameSource>(videos: &[S], every: usize) -> Result<Vec<DetectionSample>> {
    let every = every.max(1);
    let refs: Vec<(usize, usize)> = videos
        .iter()
        .enumerate()
        .flat_map(|(v, s)| (0..s.record().frame_count).step_by(every).map(move |f| (v, f)))
        .collect();
    crate::par::try_map(&refs, |&(v, f)| {
        Ok(DetectionSample { image: videos[v].frame(f)?, boxes: videos[v].record().boxes_at(f) })
    })
}

pub fn segment_frame(detector: &Detector, image: &RgbImage, max_objects: usize) -> Result<SegmentFrame> {
    let ff = detector.frame_features(image, max_objects)?;
    SegmentFrame::new(ff.full, &ff.objects, max_objects)
}

/// Mines one video's segments, computing detector features only for frames
/// the windows cover.
pub fn mine_video<S: FrameSource>(
    detector: &Detector,
    video: &S,
    max_objects: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MinedSegments> {
    let record = video.record();
    let plan = plan_segments(record, rng)?;
    let windows: Vec<_> = plan.positives.iter().chain(plan.negative.iter()).copied().collect();
    let mut needed: Vec<usize> = windows.iter().flat_map(|w| w.real_frames(record.frame_count)).collect();
    needed.sort_unstable();
    needed.dedup();
    let features = crate::par::try_map(&needed, |&f| segment_frame(detector, &video.frame(f)?, max_objects))?;
    let dim = detector.exported_feature_dim();
    let samples = windows
        .iter()
        .map(|&w| {
            build_segment(record, w, dim, max_objects, |f| {
                let i = needed.binary_search(&f).expect("frame planned");
                Ok(features[i].clone())
            })
        })
        .collect::<Result<_>>()?;
    Ok(MinedSegments { samples, warnings: plan.warnings })
}

/// Mines every video that has an accident; the rest are skipped with a
/// warning. Video `i` draws its negative window from `seed` and `i` only.
pub fn mine_all<S: FrameSource>(
    detector: &Detector,
    videos: &[S],
    max_objects: usize,
    seed: u64,
) -> Result<MinedSegments> {
    let mut out = MinedSegments { samples: Vec::new(), warnings: Vec::new() };
    for (i, v) in videos.iter().enumerate() {
        if v.record().events.is_empty() {
            let msg = format!("video {}: no accident annotated, skipped", v.record().id);
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let m = mine_video(detector, v, max_objects, &mut rng)?;
        out.samples.extend(m.samples);
        out.warnings.extend(m.warnings);
    }
    Ok(out)
}

pub fn evaluate_detector(
    detector: &Detector,
    samples: &[DetectionSample],
    iou: f64,
) -> Result<DetectionReport> {
    let images: Vec<RgbImage> = samples.iter().map(|s| s.image.clone()).collect();
    let dets = detector.detect_batch(&images)?;
    let gt: Vec<_> = samples.iter().map(|s| s.boxes.clone()).collect();
    detection_map(&dets, &gt, iou)
}

pub fn evaluate_forecaster(
    model: &Forecaster,
    segments: &[SegmentSample],
    grid: &[f64],
    recall_target: f64,
) -> Result<ForecastReport> {
    let curves = model.predict_batch(segments)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (s, scores) in segments.iter().zip(curves) {
        match (s.label, s.y) {
            (Label::Positive, Some(y)) => positives.push(PositiveCurve { scores, y, fps: s.fps }),
            _ => negatives.push(scores),
        }
    }
    forecast_curve_eval(&positives, &negatives, grid, recall_target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub videos: usize,
    pub seed: u64,
    /// Detector sees every n-th trainval frame.
    pub train_frame_step: usize,
    pub eval_frame_step: usize,
    pub iou: f64,
    pub recall_target: f64,
    pub thresholds: usize,
    pub synth: SynthConfig,
    pub detector: DetectorConfig,
    pub forecaster: ForecasterConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            videos: 24,
            seed: 0,
            train_frame_step: 12,
            eval_frame_step: 20,
            iou: crate::evaluation::DEFAULT_IOU,
            recall_target: crate::evaluation::DEFAULT_RECALL_TARGET,
            thresholds: crate::evaluation::DEFAULT_GRID_POINTS,
            detector: DetectorConfig::toy(synth.width.min(synth.height)),
            forecaster: ForecasterConfig::toy(),
            synth,
        }
    }
}

pub struct PipelineOutcome {
    pub detector: Detector,
    pub forecaster: Forecaster,
    pub detector_trace: LossTrace,
    pub forecast_trace: ForecastLossTrace,
    pub detection: DetectionReport,
    pub forecast: ForecastReport,
    pub train_segments: usize,
    pub test_segments: usize,
}

impl PipelineOutcome {
    /// Metrics as key-value text; identical runs give identical bytes.
    pub fn metrics_toml(&self) -> String {
        let mut s = String::from("[detection]\n");
        writeln!(s, "map = {}", self.detection.map).unwrap();
        for (k, v) in &self.detection.per_category {
            writeln!(s, "\"{k}\" = {v}").unwrap();
        }
        s.push_str("\n[forecast]\n");
        s.push_str(&self.forecast.to_toml());
        writeln!(s, "train_segments = {}", self.train_segments).unwrap();
        writeln!(s, "test_segments = {}", self.test_segments).unwrap();
        s
    }
}

/// Synthesizes clips, splits them 50:50, trains and evaluates the detector,
/// mines segments with it, then trains and evaluates the forecaster.
pub fn run_synthetic_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    let videos = synth_videos(config.videos, config.seed, &config.synth)?;
    let records: Vec<VideoRecord> = videos.iter().map(|v| v.record.clone()).collect();
    let plan = make_splits(&records, config.seed)?;
    let pick = |ids: &[String]| -> Vec<SyntheticVideo> {
        ids.iter().map(|id| videos.iter().find(|v| &v.record.id == id).expect("split id").clone()).collect()
    };
    let (trainval, test) = (pick(&plan.trainval), pick(&plan.test));

    let train_samples = detection_samples(&trainval, config.train_frame_step)?;
    let (detector, detector_trace) = train_detector(&train_samples, config.detector.clone())?;
    let eval_samples = detection_samples(&test, config.eval_frame_step)?;
    let detection = evaluate_detector(&detector, &eval_samples, config.iou)?;

    let k = config.forecaster.max_objects;
    let train_segs = mine_all(&detector, &trainval, k, config.seed)?.samples;
    let test_segs = mine_all(&detector, &test, k, config.seed ^ 0x7e57)?.samples;
    let (forecaster, forecast_trace) = train_forecaster(&train_segs, config.forecaster.clone())?;
    let forecast = evaluate_forecaster(
        &forecaster,
        &test_segs,
        &threshold_grid(config.thresholds),
        config.recall_target,
    )?;
    Ok(PipelineOutcome {
        detector,
        forecaster,
        detector_trace,
        forecast_trace,
        detection,
        forecast,
        train_segments: train_segs.len(),
        test_segments: test_segs.len(),
    })
}
