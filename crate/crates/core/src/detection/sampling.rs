//! RoI minibatch selection with hard-negative mining.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::category::Category;
use crate::detection::DetectorConfig;
use crate::geometry::BoundingBox;

/// A candidate region and, once labeled, its training target.
#[derive(Debug, Clone, PartialEq)]
pub struct RoICandidate {
    pub bbox: BoundingBox,
    /// Objectness from the proposal network (1.0 for injected ground truth).
    pub confidence: f64,
    /// True class, `None` for background.
    pub assigned_class: Option<Category>,
    /// Regression target for foreground candidates.
    pub target_box: Option<BoundingBox>,
}

impl RoICandidate {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Self {
        Self { bbox, confidence, assigned_class: None, target_box: None }
    }
}

/// How a candidate's confidence classifies it for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceBand {
    Positive,
    HardNegative,
    Excluded,
}

pub fn confidence_band(confidence: f64, config: &DetectorConfig) -> ConfidenceBand {
    if confidence >= config.positive_threshold {
        ConfidenceBand::Positive
    } else if confidence >= config.hard_negative_min {
        ConfidenceBand::HardNegative
    } else {
        ConfidenceBand::Excluded
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Minibatch {
    /// Indices into the candidate list; positives first.
    pub indices: Vec<usize>,
    pub positives: usize,
    pub negatives: usize,
    /// Set when nothing was eligible.
    pub empty_pool: bool,
}

/// Selects up to `batch_candidates` candidates: positives fill up to
/// `positive_slots` first, hard negatives fill the remainder. Positives may
/// exceed `positive_slots` only when there are no hard negatives at all.
/// Candidates under `hard_negative_min` are never chosen.
pub fn sample_minibatch(
    candidates: &[RoICandidate],
    config: &DetectorConfig,
    rng: &mut impl Rng,
) -> Minibatch {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        match confidence_band(c.confidence, config) {
            ConfidenceBand::Positive => positives.push(i),
            ConfidenceBand::HardNegative => negatives.push(i),
            ConfidenceBand::Excluded => {}
        }
    }
    if positives.is_empty() && negatives.is_empty() {
        log::warn!("RoI sampling: no eligible candidates");
        return Minibatch { empty_pool: true, ..Minibatch::default() };
    }
    positives.shuffle(rng);
    negatives.shuffle(rng);

    let total = config.batch_candidates;
    let n_pos = if negatives.is_empty() {
        positives.len().min(total)
    } else {
        positives.len().min(config.positive_slots)
    };
    let n_neg = negatives.len().min(total - n_pos);

    let mut indices = Vec::with_capacity(n_pos + n_neg);
    indices.extend_from_slice(&positives[..n_pos]);
    indices.extend_from_slice(&negatives[..n_neg]);
    Minibatch { indices, positives: n_pos, negatives: n_neg, empty_pool: false }
}
