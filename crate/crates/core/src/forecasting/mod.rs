//! Accident forecasting from per-frame object features.

pub mod cache;
mod checkpoint;
pub mod loss;
mod model;
pub mod segment;
mod train;

pub use loss::{negative_loss, positive_loss, positive_weight};
pub use model::{Forecaster, ForecasterConfig, LstmState};
pub use segment::{
    build_segment, mine_segments, plan_segments, positive_window, Label, MinedSegments, SegmentFrame,
    SegmentPlan, SegmentSample, Window, ACCIDENT_INDEX, SEGMENT_LEN,
};
pub use train::{continue_training, train_forecaster, EpochLoss, ForecastLossTrace};
