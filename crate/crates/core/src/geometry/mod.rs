//! Box algebra, IoU, NMS and context-region generation.

mod context;
pub(crate) mod nms;

pub use context::{mine_acm, mine_cm, should_mine, ContextMode, ContextSet};
pub use nms::{nms, nms_per_class};

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates, origin top-left.
///
/// Valid boxes have strictly positive width and height. [`BoundingBox::new`]
/// enforces this; the fields stay public so hot loops can read them directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

impl ImageSize {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> f64 {
        (self.width * self.height) as f64
    }
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from its center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(Error::invalid(format!(
                "box ({}, {}, {}, {}) has non-positive area",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn longer_side(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Intersection over union without validation. Returns 0 for a
    /// degenerate union.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// True when `other` lies inside `self` (edges may touch).
    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    /// Moves the left/right sides outward by `dx` and the top/bottom sides by
    /// `dy`. Negative values narrow the box; the result may be degenerate.
    pub fn expand(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox { x1: self.x1 - dx, y1: self.y1 - dy, x2: self.x2 + dx, y2: self.y2 + dy }
    }

    /// Clips to `[0, width] x [0, height]`; `None` if nothing with positive
    /// area remains.
    pub fn clip(&self, size: ImageSize) -> Option<BoundingBox> {
        let b = BoundingBox {
            x1: self.x1.clamp(0.0, size.width as f64),
            y1: self.y1.clamp(0.0, size.height as f64),
            x2: self.x2.clamp(0.0, size.width as f64),
            y2: self.y2.clamp(0.0, size.height as f64),
        };
        b.is_valid().then_some(b)
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BoundingBox {
        BoundingBox { x1: self.x1 * sx, y1: self.y1 * sy, x2: self.x2 * sx, y2: self.y2 * sy }
    }

    pub fn flip_horizontal(&self, width: usize) -> BoundingBox {
        let w = width as f64;
        BoundingBox { x1: w - self.x2, y1: self.y1, x2: w - self.x1, y2: self.y2 }
    }

    pub fn flip_vertical(&self, height: usize) -> BoundingBox {
        let h = height as f64;
        BoundingBox { x1: self.x1, y1: h - self.y2, x2: self.x2, y2: h - self.y1 }
    }
}

/// IoU of two boxes, rejecting boxes with non-positive area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(a.iou(b))
}

/// A scored, categorized box emitted by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub category: Category,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64, category: Category) -> Self {
        Self { bbox, score, category }
    }
}
