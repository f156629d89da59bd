use crate::detection::AnchorConfig;
use crate::geometry::BoundingBox;

/// Anchor shapes `(width, height)` for one location, scale-major. Sides are
/// left unrounded: at toy scales integer sides miss the area by several
/// percent.
pub fn anchor_shapes(config: &AnchorConfig) -> Vec<(f64, f64)> {
    let mut shapes = Vec::with_capacity(config.per_location());
    for &area in &config.scales {
        for &ratio in &config.ratios {
            let w = (area * ratio).sqrt();
            let h = area / w;
            shapes.push((w, h));
        }
    }
    shapes
}

/// All anchors for a `height x width` feature map with the given stride,
/// ordered `(y, x, anchor)`. Centers sit at the middle of each cell.
pub fn generate_anchors(
    config: &AnchorConfig,
    feature_height: usize,
    feature_width: usize,
    stride: usize,
) -> Vec<BoundingBox> {
    let shapes = anchor_shapes(config);
    let s = stride as f64;
    let mut out = Vec::with_capacity(feature_height * feature_width * shapes.len());
    for y in 0..feature_height {
        for x in 0..feature_width {
            let (cx, cy) = ((x as f64 + 0.5) * s, (y as f64 + 0.5) * s);
            for &(w, h) in &shapes {
                out.push(BoundingBox {
                    x1: cx - w / 2.0,
                    y1: cy - h / 2.0,
                    x2: cx + w / 2.0,
                    y2: cy + h / 2.0,
                });
            }
        }
    }
    out
}
