//! Recurrent accident forecaster with dynamic spatial attention.
//!
//! Per frame: the whole-frame feature and each valid object feature are
//! embedded; attention weights over objects come from the previous hidden
//! state; the LSTM consumes `[frame embedding ; attended objects]` and a
//! two-way softmax on the hidden state gives the accident score `a_t`.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Ix1, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::loss::{negative_loss, negative_loss_grad, positive_loss, positive_loss_grad};
use crate::forecasting::segment::{Label, SegmentFrame, SegmentSample};
use crate::nn::{sigmoid, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub hidden: usize,
    pub embed: usize,
    pub attention: usize,
    /// Object slots per frame.
    pub max_objects: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            embed: 256,
            attention: 128,
            max_objects: 10,
            learning_rate: 1e-4,
            grad_clip: 5.0,
            epochs: 40,
            batch_size: 10,
            seed: 0,
        }
    }
}

impl ForecasterConfig {
    /// Small widths for synthetic data on a CPU.
    pub fn toy() -> Self {
        Self { hidden: 32, embed: 32, attention: 16, learning_rate: 3e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 || self.attention == 0 || self.max_objects == 0 {
            return Err(Error::Config("forecaster widths and max_objects must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("learning_rate and grad_clip must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) const PARAM_NAMES: [&str; 13] = [
    "embed_full.weight",
    "embed_full.bias",
    "embed_obj.weight",
    "embed_obj.bias",
    "att.hidden",
    "att.object",
    "att.bias",
    "att.score",
    "lstm.input",
    "lstm.hidden",
    "lstm.bias",
    "out.weight",
    "out.bias",
];

/// Borrowed, typed view of the parameters.
struct W<'a> {
    ef_w: ArrayView2<'a, f64>,
    ef_b: ArrayView1<'a, f64>,
    eo_w: ArrayView2<'a, f64>,
    eo_b: ArrayView1<'a, f64>,
    a_h: ArrayView2<'a, f64>,
    a_o: ArrayView2<'a, f64>,
    a_b: ArrayView1<'a, f64>,
    a_w: ArrayView1<'a, f64>,
    l_x: ArrayView2<'a, f64>,
    l_h: ArrayView2<'a, f64>,
    l_b: ArrayView1<'a, f64>,
    o_w: ArrayView2<'a, f64>,
    o_b: ArrayView1<'a, f64>,
}

/// Gradients with the same layout as [`W`].
pub(crate) struct Grads {
    ef_w: Array2<f64>,
    ef_b: Array1<f64>,
    eo_w: Array2<f64>,
    eo_b: Array1<f64>,
    a_h: Array2<f64>,
    a_o: Array2<f64>,
    a_b: Array1<f64>,
    a_w: Array1<f64>,
    l_x: Array2<f64>,
    l_h: Array2<f64>,
    l_b: Array1<f64>,
    o_w: Array2<f64>,
    o_b: Array1<f64>,
}

impl Grads {
    fn zeros(w: &W<'_>) -> Self {
        Self {
            ef_w: Array2::zeros(w.ef_w.raw_dim()),
            ef_b: Array1::zeros(w.ef_b.raw_dim()),
            eo_w: Array2::zeros(w.eo_w.raw_dim()),
            eo_b: Array1::zeros(w.eo_b.raw_dim()),
            a_h: Array2::zeros(w.a_h.raw_dim()),
            a_o: Array2::zeros(w.a_o.raw_dim()),
            a_b: Array1::zeros(w.a_b.raw_dim()),
            a_w: Array1::zeros(w.a_w.raw_dim()),
            l_x: Array2::zeros(w.l_x.raw_dim()),
            l_h: Array2::zeros(w.l_h.raw_dim()),
            l_b: Array1::zeros(w.l_b.raw_dim()),
            o_w: Array2::zeros(w.o_w.raw_dim()),
            o_b: Array1::zeros(w.o_b.raw_dim()),
        }
    }

    /// In [`PARAM_NAMES`] order.
    pub(crate) fn into_vec(self) -> Vec<ArrayD<f64>> {
        vec![
            self.ef_w.into_dyn(),
            self.ef_b.into_dyn(),
            self.eo_w.into_dyn(),
            self.eo_b.into_dyn(),
            self.a_h.into_dyn(),
            self.a_o.into_dyn(),
            self.a_b.into_dyn(),
            self.a_w.into_dyn(),
            self.l_x.into_dyn(),
            self.l_h.into_dyn(),
            self.l_b.into_dyn(),
            self.o_w.into_dyn(),
            self.o_b.into_dyn(),
        ]
    }
}

fn outer_add(target: &mut Array2<f64>, a: &Array1<f64>, b: ArrayView1<'_, f64>) {
    for (mut row, &ai) in target.rows_mut().into_iter().zip(a) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: Array1::zeros(hidden), c: Array1::zeros(hidden) }
    }
}

struct StepCache {
    full: Array1<f64>,
    xf: Array1<f64>,
    /// (input, embedding) for each valid slot
    objs: Vec<(Array1<f64>, Array1<f64>)>,
    p: Vec<Array1<f64>>,
    alpha: Vec<f64>,
    x: Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    tc: Array1<f64>,
    h: Array1<f64>,
    a: f64,
}

pub struct Forecaster {
    pub config: ForecasterConfig,
    feature_dim: usize,
    pub(crate) params: Vec<Param>,
    trained: bool,
}

impl Forecaster {
    pub fn new(config: ForecasterConfig, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, e, a, h) = (feature_dim, config.embed, config.attention, config.hidden);
        let mut normal =
            |shape: &[usize], fan_in: usize| Param::normal(shape, 1.0 / (fan_in as f64).sqrt(), &mut rng);
        let mut params = vec![
            normal(&[e, d], d),
            Param::zeros(&[e]),
            normal(&[e, d], d),
            Param::zeros(&[e]),
            normal(&[a, h], h),
            normal(&[a, e], e),
            Param::zeros(&[a]),
            normal(&[a], a),
            normal(&[4 * h, 2 * e], 2 * e),
            normal(&[4 * h, h], h),
            Param::zeros(&[4 * h]),
            normal(&[2, h], h),
            Param::zeros(&[2]),
        ];
        // forget gate starts open
        params[10].value.as_slice_mut().expect("contiguous")[h..2 * h].fill(1.0);
        Ok(Self { config, feature_dim, params, trained: false })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn named_params(&self) -> Vec<(String, &Param)> {
        PARAM_NAMES.iter().map(|n| n.to_string()).zip(&self.params).collect()
    }

    fn w(&self) -> W<'_> {
        let m = |i: usize| self.params[i].value.view().into_dimensionality::<Ix2>().expect("matrix");
        let v = |i: usize| self.params[i].value.view().into_dimensionality::<Ix1>().expect("vector");
        W {
            ef_w: m(0),
            ef_b: v(1),
            eo_w: m(2),
            eo_b: v(3),
            a_h: m(4),
            a_o: m(5),
            a_b: v(6),
            a_w: v(7),
            l_x: m(8),
            l_h: m(9),
            l_b: v(10),
            o_w: m(11),
            o_b: v(12),
        }
    }

    fn check_frame(&self, full: &[f64], objects: &[f64], mask: &[bool]) -> Result<()> {
        let d = self.feature_dim;
        if full.len() != d || objects.len() != d * mask.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![d, mask.len() * d],
                actual: vec![full.len(), objects.len()],
            });
        }
        Ok(())
    }

    fn step(&self, w: &W<'_>, state: &LstmState, full: &[f64], objects: &[f64], mask: &[bool]) -> StepCache {
        let d = self.feature_dim;
        let e = self.config.embed;
        let hs = self.config.hidden;
        let full = Array1::from(full.to_vec());
        let xf = (w.ef_w.dot(&full) + w.ef_b).mapv(|v| v.max(0.0));
        let objs: Vec<(Array1<f64>, Array1<f64>)> = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(k, _)| {
                let input = Array1::from(objects[k * d..(k + 1) * d].to_vec());
                let emb = (w.eo_w.dot(&input) + w.eo_b).mapv(|v| v.max(0.0));
                (input, emb)
            })
            .collect();
        let q = w.a_h.dot(&state.h) + w.a_b;
        let p: Vec<Array1<f64>> = objs.iter().map(|(_, oe)| (&q + &w.a_o.dot(oe)).mapv(f64::tanh)).collect();
        let scores: Vec<f64> = p.iter().map(|pk| w.a_w.dot(pk)).collect();
        let alpha = if scores.is_empty() { Vec::new() } else { crate::nn::softmax(&scores) };
        let mut att = Array1::zeros(e);
        for ((_, oe), &al) in objs.iter().zip(&alpha) {
            att.scaled_add(al, oe);
        }
        let mut x = Array1::zeros(2 * e);
        x.slice_mut(ndarray::s![..e]).assign(&xf);
        x.slice_mut(ndarray::s![e..]).assign(&att);
        let z = w.l_x.dot(&x) + w.l_h.dot(&state.h) + w.l_b;
        let i = z.slice(ndarray::s![..hs]).mapv(sigmoid);
        let f = z.slice(ndarray::s![hs..2 * hs]).mapv(sigmoid);
        let g = z.slice(ndarray::s![2 * hs..3 * hs]).mapv(f64::tanh);
        let o = z.slice(ndarray::s![3 * hs..]).mapv(sigmoid);
        let c = &f * &state.c + &i * &g;
        let tc = c.mapv(f64::tanh);
        let h = &o * &tc;
        let logits = w.o_w.dot(&h) + w.o_b;
        let a = sigmoid(logits[0] - logits[1]);
        StepCache {
            full,
            xf,
            objs,
            p,
            alpha,
            x,
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            tc,
            h,
            a,
        }
    }

    /// One recurrent step. Returns the new state, attention weights per
    /// object slot (zero on masked slots) and the accident score.
    pub fn dsa_step(
        &self,
        state: &LstmState,
        full: &[f64],
        objects: &[f64],
        mask: &[bool],
    ) -> Result<(LstmState, Vec<f64>, f64)> {
        self.check_frame(full, objects, mask)?;
        if state.h.len() != self.config.hidden || state.c.len() != self.config.hidden {
            return Err(Error::ShapeMismatch {
                expected: vec![self.config.hidden],
                actual: vec![state.h.len()],
            });
        }
        let cache = self.step(&self.w(), state, full, objects, mask);
        let mut weights = vec![0.0; mask.len()];
        for (slot, &al) in mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k).zip(&cache.alpha) {
            weights[slot] = al;
        }
        let c = &cache.f * &cache.c_prev + &cache.i * &cache.g;
        Ok((LstmState { h: cache.h, c }, weights, cache.a))
    }

    fn run(&self, frames: &[SegmentFrame]) -> Result<Vec<StepCache>> {
        let w = self.w();
        let mut state = LstmState::zeros(self.config.hidden);
        let mut caches = Vec::with_capacity(frames.len());
        for fr in frames {
            self.check_frame(&fr.full, &fr.objects, &fr.mask)?;
            let cache = self.step(&w, &state, &fr.full, &fr.objects, &fr.mask);
            state = LstmState { h: cache.h.clone(), c: &cache.f * &cache.c_prev + &cache.i * &cache.g };
            caches.push(cache);
        }
        Ok(caches)
    }

    /// Accident scores for every frame, regardless of training state.
    pub fn scores(&self, frames: &[SegmentFrame]) -> Result<Vec<f64>> {
        Ok(self.run(frames)?.into_iter().map(|c| c.a).collect())
    }

    /// Scores for a segment from a trained model.
    pub fn predict(&self, sample: &SegmentSample) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(Error::NotReady);
        }
        self.scores(&sample.frames)
    }

    pub fn predict_batch(&self, samples: &[SegmentSample]) -> Result<Vec<Vec<f64>>> {
        crate::par::try_map(samples, |s| self.predict(s))
    }

    /// Loss of one clip: weighted positive loss when `y` is set, negative
    /// loss otherwise.
    pub fn loss(&self, frames: &[SegmentFrame], y: Option<usize>) -> Result<f64> {
        let s = self.scores(frames)?;
        Ok(match y {
            Some(y) => positive_loss(&s, y),
            None => negative_loss(&s),
        })
    }

    pub fn sample_loss(&self, sample: &SegmentSample) -> Result<f64> {
        self.loss(&sample.frames, label_y(sample))
    }

    /// Loss and parameter gradients by backpropagation through time.
    pub(crate) fn loss_and_grads(&self, frames: &[SegmentFrame], y: Option<usize>) -> Result<(f64, Grads)> {
        let caches = self.run(frames)?;
        let scores: Vec<f64> = caches.iter().map(|c| c.a).collect();
        let (loss, dscores) = match y {
            Some(y) => (positive_loss(&scores, y), positive_loss_grad(&scores, y)),
            None => (negative_loss(&scores), negative_loss_grad(&scores)),
        };
        let w = self.w();
        let mut g = Grads::zeros(&w);
        let (e, hs) = (self.config.embed, self.config.hidden);
        let mut dh_next = Array1::<f64>::zeros(hs);
        let mut dc_next = Array1::<f64>::zeros(hs);
        for (cache, &da) in caches.iter().zip(&dscores).rev() {
            // output layer: a = sigmoid(l0 - l1)
            let dl0 = da * cache.a * (1.0 - cache.a);
            let dl = Array1::from(vec![dl0, -dl0]);
            outer_add(&mut g.o_w, &dl, cache.h.view());
            g.o_b += &dl;
            let dh = &dh_next + &w.o_w.t().dot(&dl);

            let d_o = &dh * &cache.tc;
            let dc = &dc_next + &(&dh * &cache.o * &cache.tc.mapv(|t| 1.0 - t * t));
            let d_f = &dc * &cache.c_prev;
            let d_i = &dc * &cache.g;
            let d_g = &dc * &cache.i;
            dc_next = &dc * &cache.f;

            let mut dz = Array1::zeros(4 * hs);
            dz.slice_mut(ndarray::s![..hs]).assign(&(&d_i * &cache.i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(ndarray::s![hs..2 * hs]).assign(&(&d_f * &cache.f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(ndarray::s![2 * hs..3 * hs]).assign(&(&d_g * &cache.g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(ndarray::s![3 * hs..]).assign(&(&d_o * &cache.o.mapv(|v| v * (1.0 - v))));
            outer_add(&mut g.l_x, &dz, cache.x.view());
            outer_add(&mut g.l_h, &dz, cache.h_prev.view());
            g.l_b += &dz;
            let dx = w.l_x.t().dot(&dz);
            let mut dh_prev = w.l_h.t().dot(&dz);

            // frame embedding
            let dxf_pre = &dx.slice(ndarray::s![..e]) * &cache.xf.mapv(|v| (v > 0.0) as u8 as f64);
            outer_add(&mut g.ef_w, &dxf_pre, cache.full.view());
            g.ef_b += &dxf_pre;

            // attention over objects
            if !cache.objs.is_empty() {
                let datt = dx.slice(ndarray::s![e..]).to_owned();
                let dalpha: Vec<f64> = cache.objs.iter().map(|(_, oe)| datt.dot(oe)).collect();
                let mean: f64 = cache.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                let mut dq = Array1::<f64>::zeros(w.a_b.len());
                for (k, (input, oe)) in cache.objs.iter().enumerate() {
                    let de = cache.alpha[k] * (dalpha[k] - mean);
                    let pk = &cache.p[k];
                    g.a_w.scaled_add(de, pk);
                    let dpre = pk.mapv(|v| de * (1.0 - v * v)) * w.a_w.view();
                    dq += &dpre;
                    outer_add(&mut g.a_o, &dpre, oe.view());
                    let mut doe = w.a_o.t().dot(&dpre);
                    doe.scaled_add(cache.alpha[k], &datt);
                    let dpre_o = doe * &oe.mapv(|v| (v > 0.0) as u8 as f64);
                    outer_add(&mut g.eo_w, &dpre_o, input.view());
                    g.eo_b += &dpre_o;
                }
                outer_add(&mut g.a_h, &dq, cache.h_prev.view());
                g.a_b += &dq;
                dh_prev += &w.a_h.t().dot(&dq);
            }
            dh_next = dh_prev;
        }
        Ok((loss, g))
    }
}

pub(crate) fn label_y(sample: &SegmentSample) -> Option<usize> {
    match sample.label {
        Label::Positive => sample.y,
        Label::Negative => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn micro() -> (Forecaster, Vec<SegmentFrame>) {
        let cfg = ForecasterConfig {
            hidden: 4,
            embed: 3,
            attention: 3,
            max_objects: 3,
            ..ForecasterConfig::default()
        };
        let f = Forecaster::new(cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = (0..5)
            .map(|t| {
                let full: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let objs: Vec<Vec<f64>> =
                    (0..(t % 3) + 1).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                SegmentFrame::new(full, &objs, 3).unwrap()
            })
            .collect();
        (f, frames)
    }

    #[test]
    fn attention_normalization() {
        let (f, _) = micro();
        let st = LstmState::zeros(4);
        let one = [0.3, -0.2, 0.5, 0.1, 0.9];
        let mut objects = vec![0.0; 15];
        objects[5..10].copy_from_slice(&one);
        let (_, w, a) = f.dsa_step(&st, &one, &objects, &[false, true, false]).unwrap();
        assert_eq!(w, vec![0.0, 1.0, 0.0]);
        assert!(a > 0.0 && a < 1.0);
        objects[10..15].copy_from_slice(&one);
        let (_, w, _) = f.dsa_step(&st, &one, &objects, &[false, true, true]).unwrap();
        assert!((w[1] - 0.5).abs() < 1e-15 && (w[2] - 0.5).abs() < 1e-15);
        let (_, w, _) = f.dsa_step(&st, &one, &objects, &[false; 3]).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        assert!(f.dsa_step(&st, &one[..4], &objects, &[false; 3]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut f, frames) = micro();
        for y in [Some(3), None] {
            let (_, g) = f.loss_and_grads(&frames, y).unwrap();
            let grads = g.into_vec();
            for (pi, grad) in grads.iter().enumerate() {
                for j in 0..grad.len() {
                    let h = 1e-5;
                    let orig = f.params[pi].value.as_slice().unwrap()[j];
                    f.params[pi].value.as_slice_mut().unwrap()[j] = orig + h;
                    let up = f.loss(&frames, y).unwrap();
                    f.params[pi].value.as_slice_mut().unwrap()[j] = orig - h;
                    let dn = f.loss(&frames, y).unwrap();
                    f.params[pi].value.as_slice_mut().unwrap()[j] = orig;
                    let num = (up - dn) / (2.0 * h);
                    let ana = grad.as_slice().unwrap()[j];
                    let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                    assert!(rel < 1e-4, "{} [{j}]: {ana} vs {num}", PARAM_NAMES[pi]);
                }
            }
        }
    }

    #[test]
    fn untrained_predict_is_not_ready() {
        let (f, frames) = micro();
        let s = SegmentSample {
            video: "v".into(),
            start: 0,
            label: Label::Negative,
            y: None,
            dummy_prefix_count: 0,
            dummy_suffix_count: 0,
            fps: 10.0,
            frames,
        };
        assert!(matches!(f.predict(&s), Err(Error::NotReady)));
    }
}
