use crate::error::{Error, Result};
use crate::geometry::Detection;

/// Greedy non-maximum suppression.
///
/// Detections are visited in descending score order; equal scores keep their
/// input order. A detection is suppressed when its IoU with an already kept
/// one exceeds `overlap_threshold`. The result is sorted by descending score.
pub fn nms(dets: &[Detection], overlap_threshold: f64) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&overlap_threshold) {
        return Err(Error::invalid(format!("nms threshold {overlap_threshold} outside [0, 1]")));
    }
    for d in dets {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::invalid(format!("detection score {} outside [0, 1]", d.score)));
        }
    }
    Ok(suppress(dets, overlap_threshold))
}

/// Runs [`nms`] independently for each category and merges the survivors by
/// descending score.
pub fn nms_per_class(dets: &[Detection], overlap_threshold: f64) -> Result<Vec<Detection>> {
    let mut out = Vec::with_capacity(dets.len());
    for category in crate::Category::ALL {
        let group: Vec<Detection> = dets.iter().filter(|d| d.category == category).copied().collect();
        if !group.is_empty() {
            out.extend(nms(&group, overlap_threshold)?);
        }
    }
    sort_by_score(&mut out);
    Ok(out)
}

pub(crate) fn sort_by_score(dets: &mut [Detection]) {
    // sort_by is stable: ties keep their relative order.
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Index-level NMS over boxes with scores, used on raw proposals.
pub(crate) fn suppress_indices(
    boxes: &[crate::BoundingBox],
    scores: &[f64],
    overlap_threshold: f64,
    limit: usize,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.len() >= limit {
            break;
        }
        if keep.iter().all(|&k| boxes[k].iou(&boxes[i]) <= overlap_threshold) {
            keep.push(i);
        }
    }
    keep
}

fn suppress(dets: &[Detection], overlap_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sort_by_score(&mut sorted);
    let mut keep: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if keep.iter().all(|k| k.bbox.iou(&d.bbox) <= overlap_threshold) {
            keep.push(d);
        }
    }
    keep
}
