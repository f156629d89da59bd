use image::RgbImage;
use ndarray::{Array2, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::category::Category;
use crate::detection::anchors::generate_anchors;
use crate::detection::backbone::{Backbone, ConvBackbone};
use crate::detection::boxcoder::BoxCoder;
use crate::detection::roi::{pool_with_context, RoutedFeature};
use crate::detection::DetectorConfig;
use crate::error::{Error, Result};
use crate::geometry::nms::suppress_indices;
use crate::geometry::{nms_per_class, BoundingBox, Detection, ImageSize};
use crate::nn::{relu, sigmoid, softmax, Conv2d, Linear, Param};

pub(crate) const RPN_CODER: BoxCoder = BoxCoder::new([1.0, 1.0, 1.0, 1.0]);
pub(crate) const HEAD_CODER: BoxCoder = BoxCoder::new([10.0, 10.0, 5.0, 5.0]);

/// Number of geometry values appended to every exported RoI feature.
pub const GEOMETRY_DIMS: usize = 4;

/// Two-stage detector: a backbone, a region proposal network and a RoI head
/// with class scores and class-agnostic box refinement.
pub struct Detector<B: Backbone = ConvBackbone> {
    pub config: DetectorConfig,
    pub(crate) backbone: B,
    pub(crate) rpn_conv: Conv2d,
    pub(crate) rpn_cls: Conv2d,
    pub(crate) rpn_reg: Conv2d,
    pub(crate) fc6: Linear,
    pub(crate) fc7: Linear,
    pub(crate) cls: Linear,
    pub(crate) reg: Linear,
    trained: bool,
}

pub(crate) struct RpnForward {
    pub conv: crate::nn::conv::ConvTrace,
    pub hidden: Array3<f64>,
    pub cls: crate::nn::conv::ConvTrace,
    pub reg: crate::nn::conv::ConvTrace,
    pub logits: Array3<f64>,
    pub deltas: Array3<f64>,
}

pub(crate) struct HeadForward {
    pub input: Array2<f64>,
    pub h6: Array2<f64>,
    pub h7: Array2<f64>,
    pub logits: Array2<f64>,
    pub deltas: Array2<f64>,
}

/// Per-frame features handed to the forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    /// Feature of the whole frame.
    pub full: Vec<f64>,
    /// One feature per kept detection, highest score first.
    pub objects: Vec<Vec<f64>>,
    pub detections: Vec<Detection>,
}

/// An image prepared for the network at one scale.
pub(crate) struct Prepared {
    pub tensor: Array3<f64>,
    pub size: ImageSize,
    /// network pixels per original pixel
    pub scale: f64,
}

pub fn image_to_tensor(image: &RgbImage) -> Array3<f64> {
    let (w, h) = image.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        image.get_pixel(x as u32, y as u32)[c] as f64 / 255.0 - 0.5
    })
}

impl Detector<ConvBackbone> {
    /// Fresh, untrained detector initialized from `config.seed`.
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let backbone = ConvBackbone::new(&config.backbone_channels, &mut rng);
        Ok(Self::with_backbone(config, backbone, &mut rng))
    }
}

impl<B: Backbone> Detector<B> {
    pub fn with_backbone(config: DetectorConfig, backbone: B, rng: &mut impl rand::Rng) -> Self {
        let c = backbone.out_channels();
        let a = config.anchors.per_location();
        let g = config.roi_grid;
        let mut rpn_cls = Conv2d::new(config.rpn_channels, a, 1, 1, 0, rng);
        let mut rpn_reg = Conv2d::new(config.rpn_channels, 4 * a, 1, 1, 0, rng);
        rpn_cls.weight.value.mapv_inplace(|w| w * 0.1);
        rpn_reg.weight.value.mapv_inplace(|w| w * 0.1);
        let mut cls = Linear::new(config.feature_dim, Category::COUNT + 1, rng);
        let mut reg = Linear::new(config.feature_dim, 4, rng);
        cls.weight.value.mapv_inplace(|w| w * 0.1);
        reg.weight.value.mapv_inplace(|w| w * 0.01);
        Self {
            rpn_conv: Conv2d::new(c, config.rpn_channels, 3, 1, 1, rng),
            rpn_cls,
            rpn_reg,
            fc6: Linear::new(c * g * g, config.head_hidden, rng),
            fc7: Linear::new(config.head_hidden, config.feature_dim, rng),
            cls,
            reg,
            backbone,
            config,
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn backbone(&self) -> &B {
        &self.backbone
    }

    /// Length of the vectors in [`FrameFeatures`].
    pub fn exported_feature_dim(&self) -> usize {
        self.config.feature_dim + GEOMETRY_DIMS
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = self.backbone.named_params();
        let layers: [(&str, [&Param; 2]); 7] = [
            ("rpn.conv", self.rpn_conv.params()),
            ("rpn.cls", self.rpn_cls.params()),
            ("rpn.reg", self.rpn_reg.params()),
            ("head.fc6", self.fc6.params()),
            ("head.fc7", self.fc7.params()),
            ("head.cls", self.cls.params()),
            ("head.reg", self.reg.params()),
        ];
        for (name, [w, b]) in layers {
            out.push((format!("{name}.weight"), w));
            out.push((format!("{name}.bias"), b));
        }
        out
    }

    /// Parameters in the same order as [`Detector::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.backbone.params_mut();
        out.extend(self.rpn_conv.params_mut());
        out.extend(self.rpn_cls.params_mut());
        out.extend(self.rpn_reg.params_mut());
        out.extend(self.fc6.params_mut());
        out.extend(self.fc7.params_mut());
        out.extend(self.cls.params_mut());
        out.extend(self.reg.params_mut());
        out
    }

    pub(crate) fn prepare(&self, image: &RgbImage, short_side: usize) -> Prepared {
        let (w, h) = image.dimensions();
        let short = w.min(h) as usize;
        if short == short_side {
            return Prepared {
                tensor: image_to_tensor(image),
                size: ImageSize::new(w as usize, h as usize),
                scale: 1.0,
            };
        }
        let scale = short_side as f64 / short as f64;
        let nw = ((w as f64 * scale).round() as u32).max(1);
        let nh = ((h as f64 * scale).round() as u32).max(1);
        let resized = image::imageops::resize(image, nw, nh, image::imageops::FilterType::Triangle);
        Prepared { tensor: image_to_tensor(&resized), size: ImageSize::new(nw as usize, nh as usize), scale }
    }

    pub(crate) fn rpn_forward(&self, features: ArrayView3<'_, f64>) -> RpnForward {
        let (mut hidden, conv) = self.rpn_conv.forward(features);
        hidden.mapv_inplace(relu);
        let (logits, cls) = self.rpn_cls.forward(hidden.view());
        let (deltas, reg) = self.rpn_reg.forward(hidden.view());
        RpnForward { conv, hidden, cls, reg, logits, deltas }
    }

    pub(crate) fn anchors_for(&self, features: ArrayView3<'_, f64>) -> Vec<BoundingBox> {
        let (_, fh, fw) = features.dim();
        generate_anchors(&self.config.anchors, fh, fw, self.backbone.stride())
    }

    /// Decoded, clipped and NMS-filtered proposals with their objectness.
    pub(crate) fn proposals(
        &self,
        rpn: &RpnForward,
        anchors: &[BoundingBox],
        size: ImageSize,
    ) -> Vec<(BoundingBox, f64)> {
        let a = self.config.anchors.per_location();
        let (_, fh, fw) = rpn.logits.dim();
        let mut boxes = Vec::with_capacity(anchors.len());
        let mut scores = Vec::with_capacity(anchors.len());
        for y in 0..fh {
            for x in 0..fw {
                for k in 0..a {
                    let anchor = &anchors[(y * fw + x) * a + k];
                    let d = [
                        rpn.deltas[[4 * k, y, x]],
                        rpn.deltas[[4 * k + 1, y, x]],
                        rpn.deltas[[4 * k + 2, y, x]],
                        rpn.deltas[[4 * k + 3, y, x]],
                    ];
                    let Some(b) = RPN_CODER.decode(anchor, &d).clip(size) else {
                        continue;
                    };
                    if b.width() < 1.0 || b.height() < 1.0 {
                        continue;
                    }
                    boxes.push(b);
                    scores.push(sigmoid(rpn.logits[[k, y, x]]));
                }
            }
        }
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
        order.truncate(self.config.pre_nms_top_n);
        let top_boxes: Vec<BoundingBox> = order.iter().map(|&i| boxes[i]).collect();
        let top_scores: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        suppress_indices(&top_boxes, &top_scores, self.config.nms_threshold, self.config.post_nms_top_n)
            .into_iter()
            .map(|i| (top_boxes[i], top_scores[i]))
            .collect()
    }

    pub(crate) fn pool(
        &self,
        features: ArrayView3<'_, f64>,
        boxes: &[BoundingBox],
        size: ImageSize,
    ) -> Result<Vec<RoutedFeature>> {
        boxes
            .iter()
            .map(|b| {
                pool_with_context(
                    features,
                    b,
                    size,
                    self.backbone.stride(),
                    self.config.roi_grid,
                    &self.config.context,
                )
            })
            .collect()
    }

    pub(crate) fn head_forward(&self, pooled: &[RoutedFeature]) -> HeadForward {
        let dim = self.fc6.inputs();
        let mut input = Array2::zeros((pooled.len(), dim));
        for (mut row, p) in input.axis_iter_mut(Axis(0)).zip(pooled) {
            row.assign(&ndarray::ArrayView1::from(p.feature.values.as_slice().expect("standard layout")));
        }
        let h6 = self.fc6.forward(input.view()).mapv(relu);
        let h7 = self.fc7.forward(h6.view()).mapv(relu);
        let logits = self.cls.forward(h7.view());
        let deltas = self.reg.forward(h7.view());
        HeadForward { input, h6, h7, logits, deltas }
    }

    fn detect_prepared(&self, prepared: &Prepared) -> Result<(Vec<Detection>, Array3<f64>)> {
        let (features, _) = self.backbone.forward(prepared.tensor.view());
        let rpn = self.rpn_forward(features.view());
        let anchors = self.anchors_for(features.view());
        // the head never trains on proposals below the hard-negative band
        let boxes: Vec<BoundingBox> = self
            .proposals(&rpn, &anchors, prepared.size)
            .into_iter()
            .filter(|p| p.1 >= self.config.hard_negative_min)
            .map(|p| p.0)
            .collect();
        let pooled = self.pool(features.view(), &boxes, prepared.size)?;
        let head = self.head_forward(&pooled);
        let mut dets = Vec::new();
        for (i, proposal) in boxes.iter().enumerate() {
            let probs = softmax(head.logits.row(i).as_slice().expect("contiguous"));
            let d = [head.deltas[[i, 0]], head.deltas[[i, 1]], head.deltas[[i, 2]], head.deltas[[i, 3]]];
            let Some(refined) = HEAD_CODER.decode(proposal, &d).clip(prepared.size) else {
                continue;
            };
            for category in Category::ALL {
                let score = probs[category.index() + 1];
                if score >= self.config.score_threshold {
                    dets.push(Detection::new(
                        refined.scale(1.0 / prepared.scale, 1.0 / prepared.scale),
                        score,
                        category,
                    ));
                }
            }
        }
        let mut dets = nms_per_class(&dets, self.config.detection_nms_threshold)?;
        dets.truncate(self.config.max_detections);
        Ok((dets, features))
    }

    /// Scored per-category detections in original image coordinates.
    pub fn detect(&self, image: &RgbImage) -> Result<Vec<Detection>> {
        if !self.trained {
            return Err(Error::NotReady);
        }
        if !self.config.multi_scale {
            let prepared = self.prepare(image, self.config.anchors.image_short_side);
            return Ok(self.detect_prepared(&prepared)?.0);
        }
        let mut all = Vec::new();
        for &scale in &self.config.test_scales {
            let prepared = self.prepare(image, scale);
            all.extend(self.detect_prepared(&prepared)?.0);
        }
        let mut merged = nms_per_class(&all, self.config.detection_nms_threshold)?;
        merged.truncate(self.config.max_detections);
        Ok(merged)
    }

    /// Runs [`Detector::detect`] over many images, in parallel when enabled.
    pub fn detect_batch(&self, images: &[RgbImage]) -> Result<Vec<Vec<Detection>>> {
        crate::par::try_map(images, |img| self.detect(img))
    }

    /// Last hidden-layer features for the whole frame and its top
    /// `max_objects` detections, each extended with normalized box geometry
    /// `(cx, cy, w, h)`.
    pub fn frame_features(&self, image: &RgbImage, max_objects: usize) -> Result<FrameFeatures> {
        if !self.trained {
            return Err(Error::NotReady);
        }
        let prepared = self.prepare(image, self.config.anchors.image_short_side);
        let (dets, features) = self.detect_prepared(&prepared)?;
        let size = prepared.size;
        let whole = BoundingBox { x1: 0.0, y1: 0.0, x2: size.width as f64, y2: size.height as f64 };
        let kept: Vec<Detection> = dets.into_iter().take(max_objects).collect();
        let mut boxes = vec![whole];
        boxes.extend(kept.iter().map(|d| d.bbox.scale(prepared.scale, prepared.scale)));
        let pooled = self.pool(features.view(), &boxes, size)?;
        let head = self.head_forward(&pooled);
        let vectors: Vec<Vec<f64>> = boxes
            .iter()
            .zip(head.h7.axis_iter(Axis(0)))
            .map(|(b, row)| {
                let (cx, cy) = b.center();
                let (w, h) = (size.width as f64, size.height as f64);
                let mut v = row.to_vec();
                v.extend([cx / w, cy / h, b.width() / w, b.height() / h]);
                v
            })
            .collect();
        let mut iter = vectors.into_iter();
        Ok(FrameFeatures {
            full: iter.next().expect("whole-frame feature"),
            objects: iter.collect(),
            detections: kept,
        })
    }
}
