//! Minimal dense/convolutional layers with hand-written backward passes.
//!
//! Everything is `f64`. Layers own their [`Param`]s; a forward call returns
//! whatever the backward call needs, and backward accumulates into
//! `Param::grad`.

pub(crate) mod conv;
mod linear;
pub mod store;

pub use conv::Conv2d;
pub use linear::Linear;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    m: ArrayD<f64>,
    v: ArrayD<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_value(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn from_value(value: ArrayD<f64>) -> Self {
        let z = ArrayD::zeros(value.raw_dim());
        Self { grad: z.clone(), m: z.clone(), v: z, value }
    }

    /// Normal init with standard deviation `std`.
    pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng));
        Self::from_value(value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Replaces the value, keeping the shape. Resets optimizer moments.
    pub fn set_value(&mut self, data: Vec<f64>) -> crate::Result<()> {
        if data.len() != self.value.len() {
            return Err(crate::Error::ShapeMismatch {
                expected: self.shape().to_vec(),
                actual: vec![data.len()],
            });
        }
        self.value = ArrayD::from_shape_vec(self.value.raw_dim(), data)
            .map_err(|e| crate::Error::invalid(e.to_string()))?;
        self.m.fill(0.0);
        self.v.fill(0.0);
        Ok(())
    }
}

/// Adaptive-moment first-order optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears its gradient.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for p in params {
            ndarray::Zip::from(&mut p.value).and(&mut p.m).and(&mut p.v).and(&p.grad).for_each(
                |w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                },
            );
            p.zero_grad();
        }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<'a>(params: impl IntoIterator<Item = &'a mut Param>, max_norm: f64) -> f64 {
    let params: Vec<&mut Param> = params.into_iter().collect();
    let norm = params.iter().map(|p| p.grad.iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params {
            p.grad.mapv_inplace(|g| g * s);
        }
    }
    norm
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
