//! Fixed-length clips for forecaster training and the segment miner.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::VideoRecord;
use crate::error::{Error, Result};

pub const SEGMENT_LEN: usize = 100;
/// Index of the accident frame inside a positive segment.
pub const ACCIDENT_INDEX: usize = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

/// Features of one frame: the whole-frame vector and `max_objects` object
/// slots, row-major, with a validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFrame {
    pub full: Vec<f64>,
    pub objects: Vec<f64>,
    pub mask: Vec<bool>,
    pub dummy: bool,
}

impl SegmentFrame {
    pub fn dummy(dim: usize, max_objects: usize) -> Self {
        Self {
            full: vec![0.0; dim],
            objects: vec![0.0; dim * max_objects],
            mask: vec![false; max_objects],
            dummy: true,
        }
    }

    /// Packs up to `max_objects` feature vectors, zero-padding the rest.
    pub fn new(full: Vec<f64>, objects: &[Vec<f64>], max_objects: usize) -> Result<Self> {
        let dim = full.len();
        let mut flat = vec![0.0; dim * max_objects];
        let mut mask = vec![false; max_objects];
        for (k, o) in objects.iter().take(max_objects).enumerate() {
            if o.len() != dim {
                return Err(Error::ShapeMismatch { expected: vec![dim], actual: vec![o.len()] });
            }
            flat[k * dim..(k + 1) * dim].copy_from_slice(o);
            mask[k] = true;
        }
        Ok(Self { full, objects: flat, mask, dummy: false })
    }

    pub fn object(&self, k: usize) -> &[f64] {
        let d = self.full.len();
        &self.objects[k * d..(k + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSample {
    pub video: String,
    /// Source frame of index 0; negative when dummy frames lead.
    pub start: i64,
    pub label: Label,
    /// Accident index for positives.
    pub y: Option<usize>,
    pub dummy_prefix_count: usize,
    /// Dummy frames appended when the clip ends before the window does.
    pub dummy_suffix_count: usize,
    pub fps: f64,
    pub frames: Vec<SegmentFrame>,
}

impl SegmentSample {
    pub fn feature_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.full.len())
    }

    pub fn max_objects(&self) -> usize {
        self.frames.first().map_or(0, |f| f.mask.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != SEGMENT_LEN {
            return Err(Error::invalid(format!(
                "segment of {} frames, expected {SEGMENT_LEN}",
                self.frames.len()
            )));
        }
        match (self.label, self.y) {
            (Label::Positive, Some(y)) if y < SEGMENT_LEN => {}
            (Label::Negative, None) => {}
            _ => return Err(Error::invalid("positive segments need y, negatives must not have one")),
        }
        let (d, k) = (self.feature_dim(), self.max_objects());
        if self.frames.iter().any(|f| f.full.len() != d || f.mask.len() != k || f.objects.len() != d * k) {
            return Err(Error::invalid("segment frames disagree on feature shape"));
        }
        Ok(())
    }
}

/// A planned window in source-frame coordinates: `[start, start + 100)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub label: Label,
}

impl Window {
    pub fn end(&self) -> i64 {
        self.start + SEGMENT_LEN as i64
    }

    pub fn overlaps(&self, lo: i64, hi_exclusive: i64) -> bool {
        self.start < hi_exclusive && lo < self.end()
    }

    /// Source frames covered by the window that exist in a clip of
    /// `frame_count` frames.
    pub fn real_frames(&self, frame_count: usize) -> std::ops::Range<usize> {
        let lo = self.start.max(0) as usize;
        let hi = (self.end().max(0) as usize).min(frame_count);
        lo..hi.max(lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    pub positives: Vec<Window>,
    pub negative: Option<Window>,
    pub warnings: Vec<String>,
}

/// Positive window for an accident starting at `onset`.
pub fn positive_window(onset: usize) -> Window {
    Window { start: onset as i64 - ACCIDENT_INDEX as i64, label: Label::Positive }
}

/// One positive window per accident and one random negative window that
/// shares no frame with any positive window or accident interval.
pub fn plan_segments(record: &VideoRecord, rng: &mut impl Rng) -> Result<SegmentPlan> {
    if record.events.is_empty() {
        return Err(Error::invalid(format!("video {} has no annotated accident", record.id)));
    }
    let positives: Vec<Window> = record.events.iter().map(|e| positive_window(e.start)).collect();
    let blocked: Vec<(i64, i64)> = positives
        .iter()
        .map(|w| (w.start, w.end()))
        .chain(record.events.iter().map(|e| (e.start as i64, e.end as i64 + 1)))
        .collect();
    let last_start = record.frame_count as i64 - SEGMENT_LEN as i64;
    let candidates: Vec<i64> = (0..=last_start)
        .filter(|&s| {
            let w = Window { start: s, label: Label::Negative };
            blocked.iter().all(|&(lo, hi)| !w.overlaps(lo, hi))
        })
        .collect();
    let mut warnings = Vec::new();
    let negative = if candidates.is_empty() {
        let msg = format!("video {}: no accident-free 100-frame window, no negative mined", record.id);
        log::warn!("{msg}");
        warnings.push(msg);
        None
    } else {
        Some(Window { start: candidates[rng.random_range(0..candidates.len())], label: Label::Negative })
    };
    Ok(SegmentPlan { positives, negative, warnings })
}

/// Fills a window from per-frame features. `feature(frame)` is called for
/// every real source frame in the window, in order.
pub fn build_segment(
    record: &VideoRecord,
    window: Window,
    dim: usize,
    max_objects: usize,
    mut feature: impl FnMut(usize) -> Result<SegmentFrame>,
) -> Result<SegmentSample> {
    let real = window.real_frames(record.frame_count);
    let prefix = (-window.start).max(0) as usize;
    let suffix = SEGMENT_LEN - prefix - real.len();
    let mut frames = Vec::with_capacity(SEGMENT_LEN);
    frames.extend((0..prefix).map(|_| SegmentFrame::dummy(dim, max_objects)));
    for f in real {
        let frame = feature(f)?;
        if frame.full.len() != dim || frame.mask.len() != max_objects {
            return Err(Error::ShapeMismatch {
                expected: vec![dim, max_objects],
                actual: vec![frame.full.len(), frame.mask.len()],
            });
        }
        frames.push(frame);
    }
    frames.extend((0..suffix).map(|_| SegmentFrame::dummy(dim, max_objects)));
    let sample = SegmentSample {
        video: record.id.clone(),
        start: window.start,
        label: window.label,
        y: (window.label == Label::Positive).then_some(ACCIDENT_INDEX),
        dummy_prefix_count: prefix,
        dummy_suffix_count: suffix,
        fps: record.fps_or_default(),
        frames,
    };
    sample.validate()?;
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedSegments {
    pub samples: Vec<SegmentSample>,
    pub warnings: Vec<String>,
}

/// Plans and builds every segment of one video.
pub fn mine_segments(
    record: &VideoRecord,
    dim: usize,
    max_objects: usize,
    rng: &mut impl Rng,
    mut feature: impl FnMut(usize) -> Result<SegmentFrame>,
) -> Result<MinedSegments> {
    let plan = plan_segments(record, rng)?;
    let samples = plan
        .positives
        .iter()
        .chain(plan.negative.iter())
        .map(|&w| build_segment(record, w, dim, max_objects, &mut feature))
        .collect::<Result<_>>()?;
    Ok(MinedSegments { samples, warnings: plan.warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::annotations::{parse_annotations_str, AccidentEvent};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::path::Path;

    fn video(frames: usize, events: &[(usize, usize)]) -> VideoRecord {
        let mut r = parse_annotations_str(
            &format!("# video v frames {frames} fps 10 width 10 height 10\n"),
            Path::new("v"),
        )
        .unwrap();
        r.events = events.iter().map(|&(start, end)| AccidentEvent { start, end }).collect();
        r
    }

    fn tagged(f: usize) -> Result<SegmentFrame> {
        SegmentFrame::new(vec![f as f64; 2], &[vec![1.0, 1.0]], 3)
    }

    fn mine(r: &VideoRecord) -> MinedSegments {
        mine_segments(r, 2, 3, &mut ChaCha8Rng::seed_from_u64(0), tagged).unwrap()
    }

    #[test]
    fn window_arithmetic() {
        let m = mine(&video(400, &[(120, 130)]));
        let p = &m.samples[0];
        assert_eq!((p.start, p.dummy_prefix_count, p.y), (30, 0, Some(90)));
        assert_eq!(p.frames[0].full[0], 30.0);
        assert_eq!(p.frames[99].full[0], 129.0);

        let m = mine(&video(400, &[(50, 55)]));
        let p = &m.samples[0];
        assert_eq!(p.dummy_prefix_count, 40);
        assert!(p.frames[39].dummy && !p.frames[40].dummy);
        assert_eq!(p.frames[40].full[0], 0.0);
        assert_eq!(p.frames[99].full[0], 59.0);
        assert_eq!(p.frames[90].full[0], 50.0);

        let m = mine(&video(400, &[(90, 95)]));
        assert_eq!(m.samples[0].dummy_prefix_count, 0);
    }

    #[test]
    fn negative_avoids_events() {
        let r = video(400, &[(120, 200)]);
        for seed in 0..20 {
            let plan = plan_segments(&r, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let n = plan.negative.unwrap();
            assert!(!n.overlaps(30, 130) && !n.overlaps(120, 201));
            assert!(n.start >= 201 && n.end() <= 400);
        }
    }

    #[test]
    fn short_covered_clip_has_no_negative() {
        let m = mine(&video(105, &[(60, 70)]));
        assert_eq!(m.samples.len(), 1);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn trailing_padding() {
        let m = mine(&video(95, &[(90, 92)]));
        let p = &m.samples[0];
        assert_eq!(p.dummy_suffix_count, 5);
        assert!(p.frames[95].dummy);
    }

    #[test]
    fn no_accident_is_an_error() {
        assert!(plan_segments(&video(300, &[]), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
