use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ContextMode;

/// Anchor boxes tiled over every feature-map location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    /// Anchor areas in pixels².
    pub scales: Vec<f64>,
    /// Width:height ratios.
    pub ratios: Vec<f64>,
    /// Images are rescaled so their shorter side has this many pixels.
    pub image_short_side: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            scales: vec![128.0 * 128.0, 256.0 * 256.0, 512.0 * 512.0],
            ratios: vec![1.0, 2.0, 0.5],
            image_short_side: 600,
        }
    }
}

impl AnchorConfig {
    pub fn per_location(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    #[default]
    None,
    Cm,
    Acm,
}

impl std::str::FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ContextKind::None),
            "cm" => Ok(ContextKind::Cm),
            "acm" => Ok(ContextKind::Acm),
            other => Err(Error::Config(format!("unknown context mode {other:?} (expected none, cm or acm)"))),
        }
    }
}

/// Context mining applied inside RoI pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    pub mode: ContextKind,
    pub n_c: usize,
    pub m: usize,
    pub n: usize,
    /// Step in pixels.
    pub stride: f64,
    /// Area gate: mine only boxes with `area <= alpha * image_area`.
    pub alpha: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self { mode: ContextKind::None, n_c: 16, m: 8, n: 8, stride: 4.0, alpha: 0.01 }
    }
}

impl ContextConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn cm(n_c: usize, stride: f64) -> Self {
        Self { mode: ContextKind::Cm, n_c, stride, ..Self::default() }
    }

    pub fn acm(m: usize, n: usize, stride: f64) -> Self {
        Self { mode: ContextKind::Acm, m, n, stride, ..Self::default() }
    }

    pub fn mining_mode(&self) -> Option<ContextMode> {
        match self.mode {
            ContextKind::None => None,
            ContextKind::Cm => Some(ContextMode::Cm { n_c: self.n_c }),
            ContextKind::Acm => Some(ContextMode::Acm { m: self.m, n: self.n }),
        }
    }
}

/// Every detector hyperparameter. Serializes to the key-value config file
/// and to checkpoint manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub anchors: AnchorConfig,
    /// Weight of the regression term in `L = L_cls + λ L_reg`.
    pub loss_balance: f64,
    /// NMS overlap threshold applied to proposals before RoI sampling.
    pub nms_threshold: f64,
    /// Lower end of the hard-negative confidence range `[min, positive)`.
    pub hard_negative_min: f64,
    pub positive_threshold: f64,
    pub batch_candidates: usize,
    pub positive_slots: usize,
    pub learning_rate: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub context: ContextConfig,
    pub roi_grid: usize,
    pub backbone_channels: Vec<usize>,
    pub head_hidden: usize,
    pub feature_dim: usize,
    pub rpn_channels: usize,
    /// Anchors sampled per image for the proposal loss.
    pub rpn_batch: usize,
    pub rpn_positive_iou: f64,
    pub rpn_negative_iou: f64,
    /// Minimum IoU with a ground-truth box for a RoI to take its class.
    pub roi_positive_iou: f64,
    pub pre_nms_top_n: usize,
    pub post_nms_top_n: usize,
    /// Per-class NMS threshold on final detections.
    pub detection_nms_threshold: f64,
    pub score_threshold: f64,
    pub max_detections: usize,
    pub multi_scale: bool,
    /// Short-side sizes used when `multi_scale` is on.
    pub test_scales: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            anchors: AnchorConfig::default(),
            loss_balance: 1.0,
            nms_threshold: 0.7,
            hard_negative_min: 0.1,
            positive_threshold: 0.5,
            batch_candidates: 32,
            positive_slots: 16,
            learning_rate: 1e-5,
            flip_horizontal: true,
            flip_vertical: true,
            context: ContextConfig::default(),
            roi_grid: 7,
            backbone_channels: vec![16, 32, 32, 32],
            head_hidden: 128,
            feature_dim: 64,
            rpn_channels: 32,
            rpn_batch: 64,
            rpn_positive_iou: 0.7,
            rpn_negative_iou: 0.3,
            roi_positive_iou: 0.5,
            pre_nms_top_n: 300,
            post_nms_top_n: 64,
            detection_nms_threshold: 0.3,
            score_threshold: 0.05,
            max_detections: 100,
            multi_scale: false,
            test_scales: vec![480, 600, 720],
            iterations: 2000,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    /// Settings sized for small synthetic frames: anchors scaled to the
    /// canvas and a learning rate suited to training from scratch.
    pub fn toy(short_side: usize) -> Self {
        let s = short_side as f64 / 120.0;
        Self {
            anchors: AnchorConfig {
                scales: [10.0, 20.0, 40.0].iter().map(|a| (a * s) * (a * s)).collect(),
                ratios: vec![1.0, 2.0, 0.5],
                image_short_side: short_side,
            },
            learning_rate: 1e-3,
            test_scales: vec![short_side * 4 / 5, short_side, short_side * 6 / 5],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.anchors.scales.is_empty() || self.anchors.ratios.is_empty() {
            return bad("anchor scales and ratios must be non-empty".into());
        }
        if self.anchors.scales.iter().chain(&self.anchors.ratios).any(|v| !(*v > 0.0)) {
            return bad("anchor scales and ratios must be positive".into());
        }
        if self.anchors.image_short_side == 0 {
            return bad("image_short_side must be positive".into());
        }
        let ordered = 0.0 <= self.hard_negative_min
            && self.hard_negative_min < self.positive_threshold
            && self.positive_threshold <= 1.0;
        if !ordered {
            return bad(format!(
                "thresholds must satisfy 0 <= {} < {} <= 1",
                self.hard_negative_min, self.positive_threshold
            ));
        }
        if self.batch_candidates < self.positive_slots || self.batch_candidates == 0 {
            return bad("batch_candidates must be >= positive_slots and > 0".into());
        }
        for (name, v) in [
            ("nms_threshold", self.nms_threshold),
            ("detection_nms_threshold", self.detection_nms_threshold),
            ("score_threshold", self.score_threshold),
            ("context.alpha", self.context.alpha),
            ("roi_positive_iou", self.roi_positive_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.loss_balance < 0.0 || !(self.learning_rate > 0.0) {
            return bad("loss_balance must be >= 0 and learning_rate > 0".into());
        }
        if self.backbone_channels.len() != 4 || self.backbone_channels.contains(&0) {
            return bad("backbone_channels must list four positive widths".into());
        }
        if self.roi_grid == 0 || self.head_hidden == 0 || self.feature_dim == 0 {
            return bad("roi_grid, head_hidden and feature_dim must be positive".into());
        }
        if self.context.mode != ContextKind::None {
            if self.context.stride < 1.0 {
                return bad("context.stride must be >= 1".into());
            }
            if self.context.n_c == 0 || self.context.m == 0 || self.context.n == 0 {
                return bad("context n_c, m and n must be >= 1".into());
            }
        }
        if self.multi_scale && self.test_scales.is_empty() {
            return bad("multi_scale needs at least one test scale".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = DetectorConfig::default();
        c.validate().unwrap();
        assert_eq!(c.anchors.per_location(), 9);
        assert_eq!(c.batch_candidates, 32);
        assert_eq!(c.positive_slots, 16);
        assert_eq!(c.nms_threshold, 0.7);
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!(c.context.alpha, 0.01);
        DetectorConfig::toy(120).validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let mut c = DetectorConfig::toy(96);
        c.context = ContextConfig::cm(16, 4.0);
        let back = DetectorConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);

        let partial = DetectorConfig::from_toml("loss_balance = 2.0\n[context]\nmode = \"acm\"\n").unwrap();
        assert_eq!(partial.loss_balance, 2.0);
        assert_eq!(partial.context.mode, ContextKind::Acm);
        assert_eq!(partial.context.m, 8);
    }

    #[test]
    fn rejects_misordered_thresholds() {
        let c = DetectorConfig { hard_negative_min: 0.6, ..DetectorConfig::default() };
        assert!(c.validate().is_err());
        let c = DetectorConfig { positive_slots: 40, ..DetectorConfig::default() };
        assert!(c.validate().is_err());
    }
}
