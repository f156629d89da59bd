//! Per-segment losses on accident scores `a_t`.
//!
//! Positive clips use an exponentially weighted cross-entropy that ramps up
//! to full weight at the accident frame; negative clips penalize the
//! no-accident probability `1 - a_t` at every frame.

/// Floor applied to every probability before taking its log.
pub const EPS: f64 = 1e-12;

/// `exp(-max(0, y - t))`, in frames.
pub fn positive_weight(t: usize, y: usize) -> f64 {
    (-(y.saturating_sub(t) as f64)).exp()
}

pub fn positive_loss(scores: &[f64], y: usize) -> f64 {
    scores.iter().enumerate().map(|(t, &a)| -positive_weight(t, y) * a.max(EPS).ln()).sum()
}

pub fn negative_loss(scores: &[f64]) -> f64 {
    scores.iter().map(|&a| -(1.0 - a).max(EPS).ln()).sum()
}

/// `d positive_loss / d a_t`; zero where the floor is active.
pub fn positive_loss_grad(scores: &[f64], y: usize) -> Vec<f64> {
    scores.iter().enumerate().map(|(t, &a)| if a < EPS { 0.0 } else { -positive_weight(t, y) / a }).collect()
}

pub fn negative_loss_grad(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|&a| if 1.0 - a < EPS { 0.0 } else { 1.0 / (1.0 - a) }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_examples() {
        assert_eq!(positive_loss(&[1.0; 5], 2), 0.0);
        assert!(positive_loss(&[0.0], 0).is_finite());
        let e1 = (-1.0f64).exp();
        assert!((positive_loss(&[e1], 0) - 1.0).abs() < 1e-12);
        let mut s = vec![1.0; 11];
        s[0] = 0.5;
        let expected = (-10.0f64).exp() * 2f64.ln();
        assert!((positive_loss(&s, 10) - expected).abs() < 1e-12);
    }

    #[test]
    fn negative_examples() {
        assert_eq!(negative_loss(&[0.0; 7]), 0.0);
        assert!(negative_loss(&[1.0]).is_finite());
        assert!((negative_loss(&[0.5; 100]) - 100.0 * 2f64.ln()).abs() < 1e-9);
        let a = 1.0 - (-1.0f64).exp();
        assert!((negative_loss(&[a]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_profile() {
        let y = 60;
        for t in 0..100 {
            let w = positive_weight(t, y);
            if t >= y {
                assert_eq!(w, 1.0);
            } else {
                assert_eq!(w, (-((y - t) as f64)).exp());
                assert!(w <= positive_weight(t + 1, y));
            }
        }
    }

    #[test]
    fn gradients_match_differences() {
        let s = [0.2, 0.7, 0.45, 0.9, 0.05];
        let gp = positive_loss_grad(&s, 3);
        let gn = negative_loss_grad(&s);
        for i in 0..s.len() {
            let h = 1e-6;
            let (mut up, mut dn) = (s, s);
            up[i] += h;
            dn[i] -= h;
            let fp = (positive_loss(&up, 3) - positive_loss(&dn, 3)) / (2.0 * h);
            let fnn = (negative_loss(&up) - negative_loss(&dn)) / (2.0 * h);
            assert!((fp - gp[i]).abs() <= 1e-6 * fp.abs().max(1e-3));
            assert!((fnn - gn[i]).abs() <= 1e-6 * fnn.abs().max(1e-3));
        }
    }
}
