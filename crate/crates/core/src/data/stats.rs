use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::data::VideoRecord;

/// Longer-side size buckets, in pixels.
pub const SMALL_MAX: f64 = 100.0;
pub const MEDIUM_MAX: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

pub fn size_bucket(longer_side: f64) -> SizeBucket {
    if longer_side < SMALL_MAX {
        SizeBucket::Small
    } else if longer_side <= MEDIUM_MAX {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeHistogram {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub videos: usize,
    /// Tracks per category label.
    pub tracks_per_category: BTreeMap<String, usize>,
    /// Annotated boxes (lost entries excluded) per category label.
    pub boxes_per_category: BTreeMap<String, usize>,
    pub sizes: SizeHistogram,
    pub frame_counts: BTreeMap<String, usize>,
    pub mean_frame_count: f64,
    pub accident_events: usize,
    /// Mean onset of the first accident over videos that have one, seconds.
    pub mean_time_to_first_accident: Option<f64>,
    /// Usual/unusual track labels are not defined for this data.
    pub usual_unusual_tracks: String,
}

pub fn dataset_stats(records: &[VideoRecord]) -> DatasetStats {
    let mut tracks_per_category: BTreeMap<String, usize> =
        Category::ALL.iter().map(|c| (c.name().to_string(), 0)).collect();
    let mut boxes_per_category = tracks_per_category.clone();
    let mut sizes = SizeHistogram::default();
    let mut frame_counts = BTreeMap::new();
    let mut first_onsets = Vec::new();
    let mut accident_events = 0;
    for r in records {
        frame_counts.insert(r.id.clone(), r.frame_count);
        accident_events += r.events.len();
        if let Some(first) = r.events.iter().map(|e| e.start).min() {
            first_onsets.push(first as f64 / r.fps_or_default());
        }
        for t in &r.tracks {
            *tracks_per_category.get_mut(t.category.name()).expect("all categories seeded") += 1;
            for e in t.entries.iter().filter(|e| !e.lost) {
                *boxes_per_category.get_mut(t.category.name()).expect("seeded") += 1;
                match size_bucket(e.bbox.longer_side()) {
                    SizeBucket::Small => sizes.small += 1,
                    SizeBucket::Medium => sizes.medium += 1,
                    SizeBucket::Large => sizes.large += 1,
                }
            }
        }
    }
    let mean_frame_count = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.frame_count as f64).sum::<f64>() / records.len() as f64
    };
    DatasetStats {
        videos: records.len(),
        tracks_per_category,
        boxes_per_category,
        sizes,
        frame_counts,
        mean_frame_count,
        accident_events,
        mean_time_to_first_accident: (!first_onsets.is_empty())
            .then(|| first_onsets.iter().sum::<f64>() / first_onsets.len() as f64),
        usual_unusual_tracks: "not computed (no definition of usual/unusual)".to_string(),
    }
}

impl DatasetStats {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "videos                  {}", self.videos).unwrap();
        writeln!(s, "mean frame count        {:.2}", self.mean_frame_count).unwrap();
        writeln!(s, "accident events         {}", self.accident_events).unwrap();
        match self.mean_time_to_first_accident {
            Some(t) => writeln!(s, "time to first accident  {t:.3} s").unwrap(),
            None => writeln!(s, "time to first accident  unavailable").unwrap(),
        }
        writeln!(s, "\n{:<16}{:>8}{:>10}", "category", "tracks", "boxes").unwrap();
        for c in Category::ALL {
            writeln!(
                s,
                "{:<16}{:>8}{:>10}",
                c.name(),
                self.tracks_per_category[c.name()],
                self.boxes_per_category[c.name()]
            )
            .unwrap();
        }
        writeln!(s, "\nsize (longer side)").unwrap();
        writeln!(s, "  small  (<100 px)      {}", self.sizes.small).unwrap();
        writeln!(s, "  medium (100-300 px)   {}", self.sizes.medium).unwrap();
        writeln!(s, "  large  (>300 px)      {}", self.sizes.large).unwrap();
        writeln!(s, "\nusual/unusual tracks: {}", self.usual_unusual_tracks).unwrap();
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("stats serialize")
    }
}
