use ndarray::{linalg::general_mat_mul, Array2, Array3, ArrayView2, ArrayView3, Axis, Ix1, Ix2};
use rand::Rng;

use super::Param;

/// 2-D convolution over `(channels, height, width)` maps, lowered to a matrix
/// product through im2col.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `(out, in * k * k)`
    pub weight: Param,
    /// `(out,)`
    pub bias: Param,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Saved state from a forward pass.
#[derive(Debug, Clone)]
pub struct ConvTrace {
    cols: Array2<f64>,
    input_dim: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::normal(&[out_channels, fan_in], (2.0 / fan_in as f64).sqrt(), rng),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = 2 * self.padding;
        ((h + p).saturating_sub(k) / self.stride + 1, (w + p).saturating_sub(k) / self.stride + 1)
    }

    fn w(&self) -> ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().unwrap()
    }

    pub fn forward(&self, input: ArrayView3<'_, f64>) -> (Array3<f64>, ConvTrace) {
        let (c, h, w) = input.dim();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (ho, wo) = self.output_hw(h, w);
        let cols = self.im2col(input, ho, wo);
        let oc = self.out_channels();
        let mut out = Array2::zeros((oc, ho * wo));
        general_mat_mul(1.0, &self.w(), &cols, 0.0, &mut out);
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        out += &b.insert_axis(Axis(1));
        let out = out.into_shape_with_order((oc, ho, wo)).unwrap();
        (out, ConvTrace { cols, input_dim: (c, h, w), out_hw: (ho, wo) })
    }

    /// Accumulates parameter gradients. Returns `dL/dinput` when
    /// `need_input_grad` is set.
    pub fn backward(
        &mut self,
        trace: &ConvTrace,
        grad_out: ArrayView3<'_, f64>,
        need_input_grad: bool,
    ) -> Option<Array3<f64>> {
        let oc = self.out_channels();
        let (ho, wo) = trace.out_hw;
        let g = grad_out.to_shape((oc, ho * wo)).expect("grad shape matches output");
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            general_mat_mul(1.0, &g, &trace.cols.t(), 1.0, &mut gw);
        }
        {
            let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            gb += &g.sum_axis(Axis(1));
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = Array2::zeros(trace.cols.raw_dim());
        general_mat_mul(1.0, &self.w().t(), &g, 0.0, &mut dcols);
        Some(self.col2im(&dcols, trace.input_dim, ho, wo))
    }

    fn im2col(&self, input: ArrayView3<'_, f64>, ho: usize, wo: usize) -> Array2<f64> {
        let (c, h, w) = input.dim();
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let mut cols = Array2::zeros((c * k * k, ho * wo));
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let mut dst = cols.row_mut(row);
                    for oy in 0..ho {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = input[[ch, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(
        &self,
        dcols: &Array2<f64>,
        (c, h, w): (usize, usize, usize),
        ho: usize,
        wo: usize,
    ) -> Array3<f64> {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let mut out = Array3::zeros((c, h, w));
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = dcols.row((ch * k + ky) * k + kx);
                    for oy in 0..ho {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                out[[ch, iy as usize, ix as usize]] += row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}
