use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, Axis, Ix1, Ix2};
use rand::Rng;

use super::Param;

/// Fully connected layer `y = x W^T + b` over row-major batches.
#[derive(Debug, Clone)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Param,
    /// `(out,)`
    pub bias: Param,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        Self { weight: Param::normal(&[outputs, inputs], std, rng), bias: Param::zeros(&[outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn w(&self) -> ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().unwrap()
    }

    /// `x`: `(batch, in)` → `(batch, out)`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.outputs()));
        general_mat_mul(1.0, &x, &self.w().t(), 0.0, &mut y);
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        y += &b;
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: ArrayView2<'_, f64>, grad_out: ArrayView2<'_, f64>) -> Array2<f64> {
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            general_mat_mul(1.0, &grad_out.t(), &x, 1.0, &mut gw);
        }
        {
            let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            gb += &grad_out.sum_axis(Axis(0));
        }
        let mut gx = Array2::zeros((x.nrows(), self.inputs()));
        general_mat_mul(1.0, &grad_out, &self.w(), 0.0, &mut gx);
        gx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}
