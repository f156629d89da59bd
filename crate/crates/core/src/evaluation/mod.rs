//! Detection mAP and the accident-forecasting protocol.

pub mod detection;
pub mod forecast;

pub use detection::{average_precision, detection_map, DetectionReport, DEFAULT_IOU};
pub use forecast::{
    forecast_curve_eval, threshold_grid, toa, ForecastReport, OperatingPoint, PositiveCurve,
    DEFAULT_GRID_POINTS, DEFAULT_RECALL_TARGET,
};
