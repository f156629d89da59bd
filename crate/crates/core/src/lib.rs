//! Small-object detection with context-mined RoI features and accident
//! forecasting over traffic camera video.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`geometry`]: boxes, IoU, NMS and context-region generators.
//! - [`detection`]: a compact two-stage detector (RPN + RoI head) with
//!   optional context mining fused by element-wise maximum.
//! - [`forecasting`]: a recurrent forecaster with dynamic spatial attention
//!   over detected objects, its losses and the segment miner.
//! - [`evaluation`]: detection mAP and time-to-accident protocols.
//! - [`data`]: annotation parsing, statistics, splits and a synthetic video
//!   generator.
//! - [`pipeline`]: glue that turns annotated videos into detector samples and
//!   per-frame forecaster features.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod category;
pub mod data;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod forecasting;
pub mod geometry;
pub mod nn;
pub mod par;
pub mod pipeline;

pub use category::Category;
pub use error::{Error, Result};
pub use geometry::{BoundingBox, Detection, ImageSize};
