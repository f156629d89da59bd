//! Two-stage object detection with optional context fusion for small
//! objects.

pub mod anchors;
pub mod backbone;
pub mod boxcoder;
mod checkpoint;
mod config;
pub mod loss;
mod model;
pub mod roi;
pub mod sampling;
pub mod train;

pub use backbone::{Backbone, ConvBackbone};
pub use config::{AnchorConfig, ContextConfig, ContextKind, DetectorConfig};
pub use model::{image_to_tensor, Detector, FrameFeatures, GEOMETRY_DIMS};
pub use roi::{maxout_fuse, pool_with_context, roi_pool, PooledFeature};
pub use sampling::{sample_minibatch, Minibatch, RoICandidate};
pub use train::{train_detector, DetectionSample, LossRecord, LossTrace};
