use crate::geometry::BoundingBox;

/// Center/size log-space box deltas `(dx, dy, dw, dh)`, scaled by `weights`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCoder {
    pub weights: [f64; 4],
}

/// Largest log-scale change accepted when decoding.
const MAX_LOG_SCALE: f64 = 4.135166556742356; // ln(1000 / 16)

impl BoxCoder {
    pub const fn new(weights: [f64; 4]) -> Self {
        Self { weights }
    }

    pub fn encode(&self, reference: &BoundingBox, target: &BoundingBox) -> [f64; 4] {
        let (rx, ry) = reference.center();
        let (tx, ty) = target.center();
        let [wx, wy, ww, wh] = self.weights;
        [
            wx * (tx - rx) / reference.width(),
            wy * (ty - ry) / reference.height(),
            ww * (target.width() / reference.width()).ln(),
            wh * (target.height() / reference.height()).ln(),
        ]
    }

    pub fn decode(&self, reference: &BoundingBox, deltas: &[f64; 4]) -> BoundingBox {
        let (rx, ry) = reference.center();
        let [wx, wy, ww, wh] = self.weights;
        let cx = rx + deltas[0] / wx * reference.width();
        let cy = ry + deltas[1] / wy * reference.height();
        let w = reference.width() * (deltas[2] / ww).min(MAX_LOG_SCALE).exp();
        let h = reference.height() * (deltas[3] / wh).min(MAX_LOG_SCALE).exp();
        BoundingBox { x1: cx - w / 2.0, y1: cy - h / 2.0, x2: cx + w / 2.0, y2: cy + h / 2.0 }
    }
}
