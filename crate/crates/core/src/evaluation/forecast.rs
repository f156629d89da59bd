//! Time-to-accident, recall/precision sweeps and the derived AP, mean ToA
//! and ToA at a target recall.
//!
//! A clip alarms at threshold θ on the first frame whose score exceeds θ.
//! On a positive clip only alarms at or before the accident frame count; a
//! negative clip contributes at most one false positive per θ.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 201;
pub const DEFAULT_RECALL_TARGET: f64 = 0.8;

/// `n` evenly spaced thresholds covering `[0, 1]`.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

fn check_threshold(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {theta} outside [0, 1]")))
    }
}

/// Seconds between the first alarm and the accident frame `y`; `None` when
/// no frame up to `y` exceeds `theta`.
pub fn toa(scores: &[f64], theta: f64, y: usize, fps: f64) -> Result<Option<f64>> {
    check_threshold(theta)?;
    if !(fps > 0.0) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    if y >= scores.len() {
        return Err(Error::invalid(format!("accident frame {y} beyond curve of {}", scores.len())));
    }
    Ok(scores[..=y].iter().position(|&a| a > theta).map(|t| (y - t) as f64 / fps))
}

pub fn alarms(scores: &[f64], theta: f64) -> bool {
    scores.iter().any(|&a| a > theta)
}

/// A positive clip: its scores, accident frame and frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveCurve {
    pub scores: Vec<f64>,
    pub y: usize,
    pub fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub recall: f64,
    /// 0 when nothing alarms.
    pub precision: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Mean ToA over true positives, seconds.
    pub mean_toa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub positives: usize,
    pub negatives: usize,
    pub ap: f64,
    /// Mean over operating points with a true positive.
    pub mtoa: Option<f64>,
    pub recall_target: f64,
    pub toa_at_recall: Option<f64>,
    pub points: Vec<OperatingPoint>,
}

pub fn forecast_curve_eval(
    positives: &[PositiveCurve],
    negatives: &[Vec<f64>],
    grid: &[f64],
    recall_target: f64,
) -> Result<ForecastReport> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid("forecast evaluation needs positive and negative clips"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty threshold grid"));
    }
    if !(0.0..=1.0).contains(&recall_target) {
        return Err(Error::invalid(format!("recall target {recall_target} outside [0, 1]")));
    }
    for &t in grid {
        check_threshold(t)?;
    }
    let points = crate::par::try_map(grid, |&theta| {
        let mut toas = Vec::new();
        for p in positives {
            if let Some(v) = toa(&p.scores, theta, p.y, p.fps)? {
                toas.push(v);
            }
        }
        let tp = toas.len();
        let fp = negatives.iter().filter(|n| alarms(n, theta)).count();
        Ok::<_, Error>(OperatingPoint {
            threshold: theta,
            recall: tp as f64 / positives.len() as f64,
            precision: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
            true_positives: tp,
            false_positives: fp,
            mean_toa: (tp > 0).then(|| toas.iter().sum::<f64>() / tp as f64),
        })
    })?;
    let with_tp: Vec<f64> = points.iter().filter_map(|p| p.mean_toa).collect();
    Ok(ForecastReport {
        positives: positives.len(),
        negatives: negatives.len(),
        ap: area_under_pr(&points),
        mtoa: (!with_tp.is_empty()).then(|| with_tp.iter().sum::<f64>() / with_tp.len() as f64),
        recall_target,
        toa_at_recall: toa_at_recall(&points, recall_target),
        points,
    })
}

/// Area under the precision-recall sequence. Points that alarm on nothing
/// are skipped; for repeated recalls the best precision stands. The first
/// point's precision extends back to recall 0; between points the area is
/// trapezoidal.
pub fn area_under_pr(points: &[OperatingPoint]) -> f64 {
    let mut pr: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.true_positives + p.false_positives > 0)
        .map(|p| (p.recall, p.precision))
        .collect();
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pr.dedup_by(|later, earlier| later.0 == earlier.0);
    let Some(&(r0, p0)) = pr.first() else {
        return 0.0;
    };
    let mut area = r0 * p0;
    for w in pr.windows(2) {
        area += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }
    area
}

/// ToA linearly interpolated at `target` recall between the nearest
/// operating points on either side. Points sharing a recall are averaged.
/// With nothing below the target the nearest point above is used; `None`
/// when recall never reaches it.
pub fn toa_at_recall(points: &[OperatingPoint], target: f64) -> Option<f64> {
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for p in points {
        let Some(t) = p.mean_toa else { continue };
        match groups.iter_mut().find(|g| g.0 == p.recall) {
            Some(g) => {
                g.1 += t;
                g.2 += 1;
            }
            None => groups.push((p.recall, t, 1)),
        }
    }
    let curve: Vec<(f64, f64)> = groups.into_iter().map(|(r, s, n)| (r, s / n as f64)).collect();
    let above = curve.iter().filter(|c| c.0 >= target).min_by(|a, b| a.0.total_cmp(&b.0)).copied()?;
    if above.0 == target {
        return Some(above.1);
    }
    match curve.iter().filter(|c| c.0 < target).max_by(|a, b| a.0.total_cmp(&b.0)) {
        Some(&(r0, t0)) => Some(t0 + (target - r0) / (above.0 - r0) * (above.1 - t0)),
        None => Some(above.1),
    }
}

impl ForecastReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("unavailable".to_string(), |v| format!("{v:.4} s"));
        let mut s = String::new();
        writeln!(s, "positives     {}", self.positives).unwrap();
        writeln!(s, "negatives     {}", self.negatives).unwrap();
        writeln!(s, "AP            {:.4}", self.ap).unwrap();
        writeln!(s, "mToA          {}", opt(self.mtoa)).unwrap();
        writeln!(s, "ToA@{:<9} {}", self.recall_target, opt(self.toa_at_recall)).unwrap();
        s
    }

    /// Flat key-value summary, without the curve.
    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Summary {
            positives: usize,
            negatives: usize,
            ap: f64,
            mtoa: Option<f64>,
            recall_target: f64,
            toa_at_recall: Option<f64>,
            thresholds: usize,
        }
        toml::to_string(&Summary {
            positives: self.positives,
            negatives: self.negatives,
            ap: self.ap,
            mtoa: self.mtoa,
            recall_target: self.recall_target,
            toa_at_recall: self.toa_at_recall,
            thresholds: self.points.len(),
        })
        .expect("summary serialize")
    }

    /// `threshold,recall,precision,mean_toa` per line; empty ToA when no
    /// true positive.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("threshold,recall,precision,mean_toa\n");
        for p in &self.points {
            let t = p.mean_toa.map_or(String::new(), |v| v.to_string());
            writeln!(s, "{},{},{},{}", p.threshold, p.recall, p.precision, t).unwrap();
        }
        s
    }
}

/// Reads back a curve written by [`ForecastReport::curve_csv`].
pub fn parse_curve_csv(text: &str) -> Result<Vec<OperatingPoint>> {
    let path = std::path::PathBuf::from("curve.csv");
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let err = |m: String| Error::Parse { path: path.clone(), line: n + 1, message: m };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
            Ok(OperatingPoint {
                threshold: num(f[0])?,
                recall: num(f[1])?,
                precision: num(f[2])?,
                true_positives: 0,
                false_positives: 0,
                mean_toa: if f[3].trim().is_empty() { None } else { Some(num(f[3])?) },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toa_examples() {
        let mut s = vec![0.0; 100];
        for v in &mut s[60..] {
            *v = 0.9;
        }
        assert_eq!(toa(&s, 0.5, 90, 10.0).unwrap(), Some(3.0));
        assert_eq!(toa(&s, 0.5, 60, 10.0).unwrap(), Some(0.0));
        assert_eq!(toa(&s, 0.5, 59, 10.0).unwrap(), None);
        assert_eq!(toa(&s, 0.95, 90, 10.0).unwrap(), None);
        assert!(toa(&s, 1.5, 90, 10.0).is_err());
        assert!(toa(&s, -0.1, 90, 10.0).is_err());
    }

    #[test]
    fn perfect_and_silent_forecasters() {
        let grid = threshold_grid(DEFAULT_GRID_POINTS);
        let pos = vec![PositiveCurve { scores: vec![1.0; 100], y: 90, fps: 10.0 }; 3];
        let neg = vec![vec![0.0; 100]; 3];
        let r = forecast_curve_eval(&pos, &neg, &grid, 0.8).unwrap();
        assert_eq!(r.ap, 1.0);
        assert!(r.points.iter().filter(|p| p.threshold < 1.0).all(|p| p.recall == 1.0));
        assert_eq!(r.toa_at_recall, Some(9.0));
        let zero = vec![PositiveCurve { scores: vec![0.0; 100], y: 90, fps: 10.0 }; 3];
        let r = forecast_curve_eval(&zero, &neg, &grid, 0.8).unwrap();
        assert_eq!(r.ap, 0.0);
        assert!(r.points.iter().all(|p| p.recall == 0.0));
        assert_eq!(r.mtoa, None);
        assert_eq!(r.toa_at_recall, None);
    }

    #[test]
    fn interpolation_between_brackets() {
        let pt = |recall: f64, toa: f64| OperatingPoint {
            threshold: 0.0,
            recall,
            precision: 1.0,
            true_positives: 1,
            false_positives: 0,
            mean_toa: Some(toa),
        };
        let pts = [pt(1.0, 4.0), pt(0.9, 3.0), pt(0.6, 1.0), pt(0.6, 2.0)];
        // below: recall 0.6 with mean ToA 1.5; above: 0.9 with 3.0
        let v = toa_at_recall(&pts, 0.8).unwrap();
        assert!((v - (1.5 + (0.2 / 0.3) * 1.5)).abs() < 1e-12);
        assert_eq!(toa_at_recall(&pts[..2], 0.8), Some(3.0));
        assert_eq!(toa_at_recall(&pts[2..], 0.8), None);
    }

    #[test]
    fn csv_round_trip() {
        let pos =
            vec![PositiveCurve { scores: (0..100).map(|i| i as f64 / 100.0).collect(), y: 90, fps: 10.0 }];
        let neg = vec![vec![0.3; 100]];
        let r = forecast_curve_eval(&pos, &neg, &threshold_grid(11), 0.8).unwrap();
        let back = parse_curve_csv(&r.curve_csv()).unwrap();
        assert_eq!(back.len(), 11);
        for (a, b) in back.iter().zip(&r.points) {
            assert_eq!(
                (a.threshold, a.recall, a.precision, a.mean_toa),
                (b.threshold, b.recall, b.precision, b.mean_toa)
            );
        }
    }
}
