//! Detector training: RPN objectness/box loss plus the RoI head loss
//! `L = L_cls + λ L_reg` on minibatches chosen by [`sample_minibatch`].

use image::RgbImage;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::detection::backbone::Backbone;
use crate::detection::loss::{binary_cross_entropy, smooth_l1, smooth_l1_grad, softmax_cross_entropy};
use crate::detection::model::{Detector, HEAD_CODER, RPN_CODER};
use crate::detection::roi::scatter_grad;
use crate::detection::sampling::{sample_minibatch, RoICandidate};
use crate::detection::DetectorConfig;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::nn::Adam;

/// One training image with its ground-truth boxes.
#[derive(Debug, Clone)]
pub struct DetectionSample {
    pub image: RgbImage,
    pub boxes: Vec<(BoundingBox, Category)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flip {
    None,
    Horizontal,
    Vertical,
    Both,
}

impl Flip {
    pub fn apply(self, sample: &DetectionSample) -> DetectionSample {
        let (w, h) = sample.image.dimensions();
        let (hf, vf) = match self {
            Flip::None => return sample.clone(),
            Flip::Horizontal => (true, false),
            Flip::Vertical => (false, true),
            Flip::Both => (true, true),
        };
        let mut image = sample.image.clone();
        if hf {
            image::imageops::flip_horizontal_in_place(&mut image);
        }
        if vf {
            image::imageops::flip_vertical_in_place(&mut image);
        }
        let boxes = sample
            .boxes
            .iter()
            .map(|&(b, c)| {
                let mut b = b;
                if hf {
                    b = b.flip_horizontal(w as usize);
                }
                if vf {
                    b = b.flip_vertical(h as usize);
                }
                (b, c)
            })
            .collect();
        DetectionSample { image, boxes }
    }
}

/// Flip variants seen per image in one epoch.
pub fn augmentations(config: &DetectorConfig) -> Vec<Flip> {
    let mut v = vec![Flip::None];
    if config.flip_horizontal {
        v.push(Flip::Horizontal);
    }
    if config.flip_vertical {
        v.push(Flip::Vertical);
    }
    if config.flip_horizontal && config.flip_vertical {
        v.push(Flip::Both);
    }
    v
}

/// Number of training views in one epoch over `base` images.
pub fn epoch_len(base: usize, config: &DetectorConfig) -> usize {
    base * augmentations(config).len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub rpn: f64,
    /// Head classification loss per sampled RoI.
    pub cls: f64,
    /// Head regression loss per sampled RoI.
    pub reg: f64,
    /// `cls + λ reg`
    pub head: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,rpn,cls,reg,head\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{},{}\n", r.iteration, r.rpn, r.cls, r.reg, r.head));
        }
        s
    }

    /// Mean head loss over the last `n` iterations.
    pub fn recent_head_loss(&self, n: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        tail.iter().map(|r| r.head).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Training target for one sampled RoI: class index (0 = background) and,
/// for foreground, the encoded box deltas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadTarget {
    pub class: usize,
    pub deltas: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLoss {
    /// `Σ -ln p_u`
    pub cls: f64,
    /// `Σ smooth_l1(t - v)` over foreground RoIs
    pub reg: f64,
    pub total: f64,
}

/// Summed head loss `L_cls + λ L_reg` and its gradients with respect to the
/// class logits and box deltas.
pub fn head_loss(
    logits: ArrayView2<'_, f64>,
    deltas: ArrayView2<'_, f64>,
    targets: &[HeadTarget],
    lambda: f64,
) -> (HeadLoss, Array2<f64>, Array2<f64>) {
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut ddeltas = Array2::zeros(deltas.raw_dim());
    let (mut cls, mut reg) = (0.0, 0.0);
    for (i, t) in targets.iter().enumerate() {
        let (l, g) = softmax_cross_entropy(logits.row(i).as_slice().expect("contiguous"), t.class);
        cls += l;
        dlogits.row_mut(i).assign(&ndarray::Array1::from(g));
        if let Some(v) = t.deltas {
            for k in 0..4 {
                let diff = deltas[[i, k]] - v[k];
                reg += smooth_l1(diff);
                ddeltas[[i, k]] = lambda * smooth_l1_grad(diff);
            }
        }
    }
    (HeadLoss { cls, reg, total: cls + lambda * reg }, dlogits, ddeltas)
}

/// Trains a fresh detector for `config.iterations` steps.
pub fn train_detector(dataset: &[DetectionSample], config: DetectorConfig) -> Result<(Detector, LossTrace)> {
    let mut detector = Detector::new(config)?;
    let iterations = detector.config.iterations;
    let trace = train_iterations(&mut detector, dataset, iterations)?;
    Ok((detector, trace))
}

/// Runs `iterations` single-image steps over shuffled, flip-augmented views
/// of `dataset`. Deterministic given `config.seed`.
pub fn train_iterations<B: Backbone>(
    detector: &mut Detector<B>,
    dataset: &[DetectionSample],
    iterations: usize,
) -> Result<LossTrace> {
    if dataset.is_empty() {
        return Err(Error::invalid("detector training needs at least one image"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(detector.config.seed ^ 0x5eed_de7e);
    let mut opt = Adam::new(detector.config.learning_rate);
    let flips = augmentations(&detector.config);
    let mut order: Vec<(usize, Flip)> = Vec::new();
    let mut trace = LossTrace::default();
    for iteration in 0..iterations {
        if order.is_empty() {
            order = (0..dataset.len()).flat_map(|i| flips.iter().map(move |&f| (i, f))).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let (idx, flip) = order.pop().expect("refilled");
        let view = flip.apply(&dataset[idx]);
        let record = train_step(detector, &view, &mut rng)?;
        opt.step(detector.params_mut());
        trace.records.push(LossRecord { iteration, ..record });
    }
    detector.mark_trained();
    Ok(trace)
}

/// Forward and backward pass for one image. Gradients accumulate in the
/// parameters; the caller applies the optimizer.
pub(crate) fn train_step<B: Backbone>(
    det: &mut Detector<B>,
    sample: &DetectionSample,
    rng: &mut impl Rng,
) -> Result<LossRecord> {
    let prepared = det.prepare(&sample.image, det.config.anchors.image_short_side);
    let size = prepared.size;
    let gt: Vec<(BoundingBox, Category)> = sample
        .boxes
        .iter()
        .filter_map(|&(b, c)| b.scale(prepared.scale, prepared.scale).clip(size).map(|b| (b, c)))
        .collect();
    let lambda = det.config.loss_balance;

    let (features, backbone_trace) = det.backbone.forward(prepared.tensor.view());
    let rpn = det.rpn_forward(features.view());
    let anchors = det.anchors_for(features.view());

    // proposal network loss
    let labels = rpn_labels(&anchors, &gt, &det.config, rng);
    let a = det.config.anchors.per_location();
    let (_, fh, fw) = rpn.logits.dim();
    let mut dlogits = Array3::zeros(rpn.logits.raw_dim());
    let mut ddeltas = Array3::zeros(rpn.deltas.raw_dim());
    let sampled = labels.iter().filter(|l| l.is_some()).count().max(1) as f64;
    let mut rpn_loss = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let Some(target) = label else { continue };
        let (k, x, y) = (i % a, (i / a) % fw, i / a / fw);
        debug_assert!(y < fh);
        let (l, g) = binary_cross_entropy(rpn.logits[[k, y, x]], target.is_some());
        rpn_loss += l;
        dlogits[[k, y, x]] = g / sampled;
        if let Some(v) = target {
            for d in 0..4 {
                let diff = rpn.deltas[[4 * k + d, y, x]] - v[d];
                rpn_loss += lambda * smooth_l1(diff);
                ddeltas[[4 * k + d, y, x]] = lambda * smooth_l1_grad(diff) / sampled;
            }
        }
    }
    rpn_loss /= sampled;

    // RoI sampling over proposals plus ground truth
    let mut candidates: Vec<RoICandidate> =
        det.proposals(&rpn, &anchors, size).into_iter().map(|(b, conf)| RoICandidate::new(b, conf)).collect();
    candidates.extend(gt.iter().map(|&(b, _)| RoICandidate::new(b, 1.0)));
    let batch = sample_minibatch(&candidates, &det.config, rng);
    let mut selected: Vec<RoICandidate> = batch.indices.iter().map(|&i| candidates[i].clone()).collect();
    for c in &mut selected {
        let best = gt.iter().map(|(g, cat)| (c.bbox.iou(g), g, cat)).max_by(|x, y| x.0.total_cmp(&y.0));
        if let Some((iou, g, cat)) = best {
            if iou >= det.config.roi_positive_iou {
                c.assigned_class = Some(*cat);
                c.target_box = Some(*g);
            }
        }
    }

    let mut feature_grad = Array3::zeros(features.raw_dim());
    let mut head_record = (0.0, 0.0, 0.0);
    if !selected.is_empty() {
        let boxes: Vec<BoundingBox> = selected.iter().map(|c| c.bbox).collect();
        let pooled = det.pool(features.view(), &boxes, size)?;
        let head = det.head_forward(&pooled);
        let targets: Vec<HeadTarget> = selected
            .iter()
            .map(|c| HeadTarget {
                class: c.assigned_class.map_or(0, |k| k.index() + 1),
                deltas: c.target_box.map(|g| HEAD_CODER.encode(&c.bbox, &g)),
            })
            .collect();
        let (loss, mut dlog, mut ddel) = head_loss(head.logits.view(), head.deltas.view(), &targets, lambda);
        let n = selected.len() as f64;
        head_record = (loss.cls / n, loss.reg / n, loss.total / n);
        dlog /= n;
        ddel /= n;

        let mut dh7 = det.cls.backward(head.h7.view(), dlog.view());
        dh7 += &det.reg.backward(head.h7.view(), ddel.view());
        dh7.zip_mut_with(&head.h7, |g, &a| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
        let mut dh6 = det.fc7.backward(head.h6.view(), dh7.view());
        dh6.zip_mut_with(&head.h6, |g, &a| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
        let dinput = det.fc6.backward(head.input.view(), dh6.view());
        for (routed, row) in pooled.iter().zip(dinput.axis_iter(Axis(0))) {
            scatter_grad(routed, row.as_slice().expect("contiguous"), &mut feature_grad);
        }
    }

    let mut dhidden = det.rpn_cls.backward(&rpn.cls, dlogits.view(), true).expect("input grad");
    dhidden += &det.rpn_reg.backward(&rpn.reg, ddeltas.view(), true).expect("input grad");
    dhidden.zip_mut_with(&rpn.hidden, |g, &a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
    feature_grad += &det.rpn_conv.backward(&rpn.conv, dhidden.view(), true).expect("input grad");
    det.backbone.backward(&backbone_trace, feature_grad.view());

    Ok(LossRecord {
        iteration: 0,
        rpn: rpn_loss,
        cls: head_record.0,
        reg: head_record.1,
        head: head_record.2,
    })
}

/// Per-anchor sampling decision: `None` = not sampled, `Some(None)` =
/// negative, `Some(Some(deltas))` = positive with its regression target.
type AnchorLabel = Option<Option<[f64; 4]>>;

fn rpn_labels(
    anchors: &[BoundingBox],
    gt: &[(BoundingBox, Category)],
    config: &DetectorConfig,
    rng: &mut impl Rng,
) -> Vec<AnchorLabel> {
    let mut best_iou = vec![0.0f64; anchors.len()];
    let mut best_gt = vec![usize::MAX; anchors.len()];
    let mut gt_best = vec![0.0f64; gt.len()];
    for (i, a) in anchors.iter().enumerate() {
        for (j, (g, _)) in gt.iter().enumerate() {
            let v = a.iou(g);
            if v > best_iou[i] {
                best_iou[i] = v;
                best_gt[i] = j;
            }
            gt_best[j] = gt_best[j].max(v);
        }
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..anchors.len() {
        let j = best_gt[i];
        let matches_best = j != usize::MAX && best_iou[i] > 0.0 && best_iou[i] >= gt_best[j] - 1e-12;
        if best_iou[i] >= config.rpn_positive_iou || matches_best {
            positives.push(i);
        } else if best_iou[i] < config.rpn_negative_iou {
            negatives.push(i);
        }
    }
    positives.shuffle(rng);
    negatives.shuffle(rng);
    positives.truncate(config.rpn_batch / 2);
    negatives.truncate(config.rpn_batch - positives.len());
    let mut labels: Vec<AnchorLabel> = vec![None; anchors.len()];
    for &i in &positives {
        labels[i] = Some(Some(RPN_CODER.encode(&anchors[i], &gt[best_gt[i]].0)));
    }
    for &i in &negatives {
        labels[i] = Some(None);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lambda_leaves_only_classification_gradient() {
        let logits = Array2::from_shape_fn((3, 7), |(i, j)| (i as f64 - j as f64) * 0.3);
        let deltas = Array2::from_shape_fn((3, 4), |(i, j)| 0.5 * i as f64 - 0.7 * j as f64);
        let targets = [
            HeadTarget { class: 1, deltas: Some([0.1, 0.2, -0.3, 1.4]) },
            HeadTarget { class: 0, deltas: None },
            HeadTarget { class: 4, deltas: Some([2.0, -2.0, 0.0, 0.5]) },
        ];
        let (l0, g0, d0) = head_loss(logits.view(), deltas.view(), &targets, 0.0);
        let cls_only: Vec<HeadTarget> = targets.iter().map(|t| HeadTarget { deltas: None, ..*t }).collect();
        let (lc, gc, _) = head_loss(logits.view(), deltas.view(), &cls_only, 1.0);
        assert_eq!(g0, gc);
        assert!(d0.iter().all(|&v| v == 0.0));
        assert_eq!(l0.total, lc.total);
        let (l1, _, d1) = head_loss(logits.view(), deltas.view(), &targets, 1.0);
        assert!(l1.total > l0.total && d1.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn flip_augmentation_counts() {
        let mut c = DetectorConfig::default();
        assert_eq!(epoch_len(10, &c), 40);
        c.flip_vertical = false;
        assert_eq!(epoch_len(10, &c), 20);
        c.flip_horizontal = false;
        assert_eq!(epoch_len(10, &c), 10);
    }

    #[test]
    fn flips_move_boxes_with_pixels() {
        let mut image = RgbImage::new(8, 6);
        image.put_pixel(1, 2, image::Rgb([255, 0, 0]));
        let b = BoundingBox::new(1.0, 2.0, 2.0, 3.0).unwrap();
        let s = DetectionSample { image, boxes: vec![(b, Category::Car)] };
        let f = Flip::Both.apply(&s);
        let fb = f.boxes[0].0;
        assert_eq!(f.image.get_pixel(fb.x1 as u32, fb.y1 as u32)[0], 255);
        assert_eq!((fb.x1, fb.y1), (6.0, 3.0));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(train_detector(&[], DetectorConfig::toy(120)), Err(Error::InvalidInput(_))));
    }
}
