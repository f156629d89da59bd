//! Detector objectives: `L = L_cls + λ L_reg`.

/// Floor applied to probabilities inside `-ln`.
pub const PROB_FLOOR: f64 = 1e-12;

/// `0.5 x²` for `|x| < 1`, `|x| - 0.5` otherwise.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `Σ_i smooth_l1(t_i - v_i)` over the four box deltas.
pub fn regression_loss(predicted: &[f64; 4], target: &[f64; 4]) -> f64 {
    predicted.iter().zip(target).map(|(t, v)| smooth_l1(t - v)).sum()
}

/// Gradient of [`regression_loss`] with respect to `predicted`.
pub fn regression_loss_grad(predicted: &[f64; 4], target: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| smooth_l1_grad(predicted[i] - target[i]))
}

/// `-ln p`, with `p` floored at [`PROB_FLOOR`].
pub fn neg_log(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// `Σ -ln p_u` over the true-class probabilities of the sampled candidates.
pub fn classification_loss(true_class_probs: &[f64]) -> f64 {
    true_class_probs.iter().map(|&p| neg_log(p)).sum()
}

/// Derivative of `-ln p` with respect to `p` (zero below the floor).
pub fn classification_loss_grad(p: f64) -> f64 {
    if p > PROB_FLOOR {
        -1.0 / p
    } else {
        0.0
    }
}

/// Softmax cross-entropy on raw logits. Returns the loss and its gradient
/// with respect to the logits (`softmax - onehot`).
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let probs = crate::nn::softmax(logits);
    let loss = neg_log(probs[target]);
    let mut grad = probs;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Binary cross-entropy on a logit, for objectness. Returns loss and
/// `dL/dlogit`.
pub fn binary_cross_entropy(logit: f64, positive: bool) -> (f64, f64) {
    let p = crate::nn::sigmoid(logit);
    // ln(1 + e^{-|z|}) + max(z, 0) - z * y is the stable form
    let y = if positive { 1.0 } else { 0.0 };
    let loss = (1.0 + (-logit.abs()).exp()).ln() + logit.max(0.0) - logit * y;
    (loss, p - y)
}
