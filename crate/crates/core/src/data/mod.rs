//! Annotation ingestion, dataset statistics, splits and synthetic clips.

pub mod annotations;
pub mod splits;
pub mod stats;
pub mod synth;

pub use annotations::{
    find_video_dirs, frame_path, parse_annotations, parse_annotations_str, serialize_annotations,
    AccidentEvent, Track, TrackEntry, VideoRecord,
};
pub use splits::{make_splits, Fold, FrameRef, SplitPlan};
pub use stats::{dataset_stats, DatasetStats, SizeBucket, SizeHistogram};
pub use synth::{context_scene, synth_videos, SynthConfig, SyntheticVideo};
