use ndarray::{Array3, ArrayView3};
use rand::Rng;

use crate::nn::{Conv2d, Param};

/// A trainable feature extractor producing a `(channels, h, w)` map at a
/// fixed stride.
pub trait Backbone: Send + Sync {
    type Trace;

    fn stride(&self) -> usize;
    fn out_channels(&self) -> usize;
    fn forward(&self, image: ArrayView3<'_, f64>) -> (Array3<f64>, Self::Trace);
    /// Accumulates parameter gradients given `dL/dfeatures`.
    fn backward(&mut self, trace: &Self::Trace, grad: ArrayView3<'_, f64>);
    fn named_params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

/// Four 3x3 convolutions with ReLU; the first three have stride 2, giving an
/// overall stride of 8.
#[derive(Debug, Clone)]
pub struct ConvBackbone {
    layers: Vec<Conv2d>,
}

pub struct ConvBackboneTrace {
    convs: Vec<crate::nn::conv::ConvTrace>,
    activations: Vec<Array3<f64>>,
}

impl ConvBackbone {
    pub fn new(channels: &[usize], rng: &mut impl Rng) -> Self {
        assert_eq!(channels.len(), 4, "backbone has four layers");
        let mut layers = Vec::with_capacity(4);
        let mut inp = 3;
        for (i, &out) in channels.iter().enumerate() {
            let stride = if i < 3 { 2 } else { 1 };
            layers.push(Conv2d::new(inp, out, 3, stride, 1, rng));
            inp = out;
        }
        Self { layers }
    }
}

impl Backbone for ConvBackbone {
    type Trace = ConvBackboneTrace;

    fn stride(&self) -> usize {
        8
    }

    fn out_channels(&self) -> usize {
        self.layers.last().map(Conv2d::out_channels).unwrap_or(0)
    }

    fn forward(&self, image: ArrayView3<'_, f64>) -> (Array3<f64>, ConvBackboneTrace) {
        let mut convs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut x = image.to_owned();
        for layer in &self.layers {
            let (mut y, t) = layer.forward(x.view());
            y.mapv_inplace(crate::nn::relu);
            convs.push(t);
            activations.push(y.clone());
            x = y;
        }
        (x, ConvBackboneTrace { convs, activations })
    }

    fn backward(&mut self, trace: &ConvBackboneTrace, grad: ArrayView3<'_, f64>) {
        let mut g = grad.to_owned();
        for i in (0..self.layers.len()).rev() {
            ndarray::Zip::from(&mut g).and(&trace.activations[i]).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            match self.layers[i].backward(&trace.convs[i], g.view(), i > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }

    fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [(format!("backbone.{i}.weight"), &l.weight), (format!("backbone.{i}.bias"), &l.bias)]
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
