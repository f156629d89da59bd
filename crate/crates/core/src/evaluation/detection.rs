use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};

pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub iou_threshold: f64,
    /// AP for every category with at least one ground-truth box.
    pub per_category: BTreeMap<String, f64>,
    pub ground_truth_counts: BTreeMap<String, usize>,
    /// Categories left out of the mean for lack of ground truth.
    pub without_ground_truth: Vec<String>,
    pub map: f64,
}

/// All-point interpolated AP from detections already sorted by descending
/// score, given as true/false-positive flags.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
    }
    // envelope: best precision at this recall or higher
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    tp.iter().zip(&precision).filter(|(&t, _)| t).map(|(_, &p)| p / n_gt as f64).fold(0.0, |a, p| a + p)
}

/// PASCAL-style greedy matching of one category's detections. Returns the
/// true-positive flags in descending-score order.
pub fn match_detections(
    detections: &[(usize, f64, BoundingBox)],
    ground_truth: &[Vec<BoundingBox>],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].1.total_cmp(&detections[a].1));
    let mut used: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    order
        .into_iter()
        .map(|i| {
            let (img, _, bbox) = detections[i];
            let best = ground_truth[img].iter().enumerate().map(|(j, g)| (j, bbox.iou(g))).fold(
                None,
                |acc: Option<(usize, f64)>, (j, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                },
            );
            match best {
                Some((j, v)) if v >= iou_threshold && !used[img][j] => {
                    used[img][j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// mAP over categories with ground truth. `detections[i]` and
/// `ground_truth[i]` describe the same image.
pub fn detection_map(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<(BoundingBox, Category)>],
    iou_threshold: f64,
) -> Result<DetectionReport> {
    if detections.len() != ground_truth.len() {
        return Err(Error::invalid(format!(
            "{} detection lists for {} ground-truth images",
            detections.len(),
            ground_truth.len()
        )));
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::invalid(format!("IoU threshold {iou_threshold} outside [0, 1]")));
    }
    let per_class: Vec<(Category, Option<f64>, usize)> = crate::par::map(&Category::ALL, |&c| {
        let gt: Vec<Vec<BoundingBox>> = ground_truth
            .iter()
            .map(|g| g.iter().filter(|(_, k)| *k == c).map(|(b, _)| *b).collect())
            .collect();
        let n_gt: usize = gt.iter().map(Vec::len).sum();
        if n_gt == 0 {
            return (c, None, 0);
        }
        let dets: Vec<(usize, f64, BoundingBox)> = detections
            .iter()
            .enumerate()
            .flat_map(|(i, ds)| ds.iter().filter(|d| d.category == c).map(move |d| (i, d.score, d.bbox)))
            .collect();
        let tp = match_detections(&dets, &gt, iou_threshold);
        (c, Some(average_precision(&tp, n_gt)), n_gt)
    });
    let mut report = DetectionReport {
        iou_threshold,
        per_category: BTreeMap::new(),
        ground_truth_counts: BTreeMap::new(),
        without_ground_truth: Vec::new(),
        map: 0.0,
    };
    let mut sum = 0.0;
    for (c, ap, n) in per_class {
        if let Some(ap) = ap {
            sum += ap;
        }
        match ap {
            Some(ap) => {
                report.per_category.insert(c.name().to_string(), ap);
                report.ground_truth_counts.insert(c.name().to_string(), n);
            }
            None => report.without_ground_truth.push(c.name().to_string()),
        }
    }
    if !report.per_category.is_empty() {
        // summed in category order
        report.map = sum / report.per_category.len() as f64;
    }
    Ok(report)
}

impl DetectionReport {
    pub fn ap(&self, c: Category) -> Option<f64> {
        self.per_category.get(c.name()).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<16}{:>8}{:>10}\n", "category", "gt", "AP");
        for c in Category::ALL {
            if let Some(ap) = self.ap(c) {
                writeln!(s, "{:<16}{:>8}{:>10.4}", c.name(), self.ground_truth_counts[c.name()], ap).unwrap();
            }
        }
        writeln!(s, "{:<16}{:>8}{:>10.4}", format!("mAP@{}", self.iou_threshold), "", self.map).unwrap();
        if !self.without_ground_truth.is_empty() {
            writeln!(s, "no ground truth: {}", self.without_ground_truth.join(", ")).unwrap();
        }
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serialize")
    }
}
