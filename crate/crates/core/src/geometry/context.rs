//! Context regions around small objects.
//!
//! Context mining (CM) grows a box concentrically in `n_c` steps of `s`
//! pixels per side. Augmented context mining (ACM) moves the left/right and
//! top/bottom side pairs independently by `i*s` and `j*s` for every offset
//! pair in `[-m, m] x [-n, n]` except `(0, 0)`, so it both widens and narrows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageSize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextMode {
    /// Concentric expansion with `n_c` contexts.
    Cm { n_c: usize },
    /// Offset grid with `m` horizontal and `n` vertical steps.
    Acm { m: usize, n: usize },
}

/// Context regions generated for one origin box.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    pub origin: BoundingBox,
    pub mode: ContextMode,
    pub stride: f64,
    /// Surviving contexts in generation order.
    pub contexts: Vec<BoundingBox>,
    /// Number of regions generated before clipping and deduplication.
    pub generated: usize,
    /// Regions dropped because they had no area after narrowing or clipping.
    pub dropped_degenerate: usize,
    /// Regions dropped because clipping made them equal to an earlier one.
    pub dropped_duplicate: usize,
}

impl ContextSet {
    pub fn dropped(&self) -> usize {
        self.dropped_degenerate + self.dropped_duplicate
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

/// Area gate for context mining: true iff `area(box) <= alpha * image_area`.
pub fn should_mine(bbox: &BoundingBox, image_area: f64, alpha: f64) -> bool {
    debug_assert!(image_area > 0.0);
    debug_assert!((0.0..=1.0).contains(&alpha));
    bbox.area() <= alpha * image_area
}

fn check_params(bbox: &BoundingBox, stride: f64) -> Result<()> {
    bbox.validate()?;
    if !(stride >= 1.0 && stride.is_finite()) {
        return Err(Error::invalid(format!("context stride {stride} must be >= 1")));
    }
    Ok(())
}

/// Concentric context regions: the k-th context (k = 1..=n_c) is the box
/// expanded by `k * stride` on every side, then clipped to the image.
pub fn mine_cm(bbox: &BoundingBox, n_c: usize, stride: f64, image: ImageSize) -> Result<ContextSet> {
    check_params(bbox, stride)?;
    if n_c == 0 {
        return Err(Error::invalid("n_c must be >= 1"));
    }
    let raw = (1..=n_c).map(|k| {
        let d = k as f64 * stride;
        bbox.expand(d, d)
    });
    Ok(collect(bbox, ContextMode::Cm { n_c }, stride, image, raw))
}

/// Offset-grid context regions. Entry `(i, j)` moves the left and right sides
/// outward by `i * stride` and the top and bottom sides by `j * stride`
/// (inward when negative). Enumeration is row-major with `i` outermost.
pub fn mine_acm(bbox: &BoundingBox, m: usize, n: usize, stride: f64, image: ImageSize) -> Result<ContextSet> {
    check_params(bbox, stride)?;
    if m == 0 || n == 0 {
        return Err(Error::invalid("m and n must be >= 1"));
    }
    let (mi, ni) = (m as i64, n as i64);
    let raw = (-mi..=mi)
        .flat_map(move |i| (-ni..=ni).map(move |j| (i, j)))
        .filter(|&(i, j)| (i, j) != (0, 0))
        .map(|(i, j)| bbox.expand(i as f64 * stride, j as f64 * stride));
    Ok(collect(bbox, ContextMode::Acm { m, n }, stride, image, raw))
}

fn collect(
    origin: &BoundingBox,
    mode: ContextMode,
    stride: f64,
    image: ImageSize,
    raw: impl Iterator<Item = BoundingBox>,
) -> ContextSet {
    let mut set = ContextSet {
        origin: *origin,
        mode,
        stride,
        contexts: Vec::new(),
        generated: 0,
        dropped_degenerate: 0,
        dropped_duplicate: 0,
    };
    for region in raw {
        set.generated += 1;
        let Some(clipped) = region.is_valid().then(|| region.clip(image)).flatten() else {
            set.dropped_degenerate += 1;
            continue;
        };
        if set.contexts.contains(&clipped) {
            set.dropped_duplicate += 1;
        } else {
            set.contexts.push(clipped);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    const HD: ImageSize = ImageSize { width: 1280, height: 720 };

    #[test]
    fn gate_examples() {
        let s = HD.area();
        assert!(should_mine(&bx(0.0, 0.0, 100.0, 90.0), s, 0.01));
        assert!(!should_mine(&bx(0.0, 0.0, 1280.0, 720.0), s, 0.01));
        assert!(!should_mine(&bx(0.0, 0.0, 1.0, 1.0), s, 0.0));
    }

    #[test]
    fn cm_examples() {
        let set = mine_cm(&bx(100.0, 100.0, 110.0, 110.0), 2, 2.0, HD).unwrap();
        assert_eq!(set.contexts, vec![bx(98.0, 98.0, 112.0, 112.0), bx(96.0, 96.0, 114.0, 114.0)]);
        let corner = mine_cm(&bx(0.0, 0.0, 4.0, 4.0), 1, 2.0, HD).unwrap();
        assert_eq!(corner.contexts, vec![bx(0.0, 0.0, 6.0, 6.0)]);

        let origin = bx(600.0, 300.0, 620.0, 330.0);
        let big = mine_cm(&origin, 16, 4.0, HD).unwrap();
        assert_eq!(big.len(), 16);
        assert_eq!(big.contexts[15], origin.expand(64.0, 64.0));
    }

    #[test]
    fn cm_clipped_duplicates_are_dropped() {
        let whole = bx(0.0, 0.0, 1280.0, 720.0);
        let set = mine_cm(&whole, 3, 2.0, HD).unwrap();
        assert_eq!(set.contexts, vec![whole]);
        assert_eq!(set.dropped_duplicate, 2);
    }

    #[test]
    fn acm_examples() {
        let set = mine_acm(&bx(100.0, 100.0, 110.0, 110.0), 1, 1, 2.0, HD).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(set.contexts[0], bx(102.0, 102.0, 108.0, 108.0));

        let far = bx(500.0, 300.0, 540.0, 340.0);
        let grid = mine_acm(&far, 8, 8, 4.0, HD).unwrap();
        assert_eq!(grid.generated, 288);
        // offsets of -5 or less collapse a 40 px side at stride 4
        assert!(grid.len() < 288);

        let tiny = mine_acm(&bx(10.0, 10.0, 14.0, 14.0), 1, 1, 2.0, HD).unwrap();
        assert!(tiny.dropped_degenerate >= 1);
        assert!(!tiny.contexts.iter().any(|c| c.width() <= 0.0 || c.height() <= 0.0));
    }

    #[test]
    fn rejects_bad_params() {
        let b = bx(0.0, 0.0, 4.0, 4.0);
        assert!(mine_cm(&b, 0, 2.0, HD).is_err());
        assert!(mine_cm(&b, 1, 0.5, HD).is_err());
        assert!(mine_acm(&b, 0, 1, 2.0, HD).is_err());
    }
}
