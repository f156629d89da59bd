use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::model::{label_y, Forecaster, ForecasterConfig};
use crate::forecasting::segment::{Label, SegmentSample};
use crate::nn::{clip_grad_norm, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Summed positive loss over positive segments.
    pub positive: f64,
    /// Summed negative loss over negative segments.
    pub negative: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastLossTrace {
    pub epochs: Vec<EpochLoss>,
}

impl ForecastLossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,positive,negative,total\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.positive, e.negative, e.total));
        }
        s
    }
}

/// Trains a fresh forecaster on fixed segments. Minibatch gradients are
/// averaged, norm-clipped and applied with Adam; per-sample gradients may be
/// computed in parallel but are summed in batch order.
pub fn train_forecaster(
    samples: &[SegmentSample],
    config: ForecasterConfig,
) -> Result<(Forecaster, ForecastLossTrace)> {
    if !samples.iter().any(|s| s.label == Label::Positive) {
        return Err(Error::invalid("forecaster training needs at least one positive segment"));
    }
    if !samples.iter().any(|s| s.label == Label::Negative) {
        return Err(Error::invalid("forecaster training needs at least one negative segment"));
    }
    for s in samples {
        s.validate()?;
    }
    let dim = samples[0].feature_dim();
    if samples.iter().any(|s| s.feature_dim() != dim) {
        return Err(Error::invalid("segments disagree on feature dimension"));
    }
    let mut model = Forecaster::new(config, dim)?;
    let epochs = model.config.epochs;
    let trace = continue_training(&mut model, samples, epochs)?;
    Ok((model, trace))
}

pub fn continue_training(
    model: &mut Forecaster,
    samples: &[SegmentSample],
    epochs: usize,
) -> Result<ForecastLossTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0xf04e_ca57);
    let mut opt = Adam::new(model.config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = ForecastLossTrace::default();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let (mut pos, mut neg) = (0.0, 0.0);
        for batch in order.chunks(model.config.batch_size) {
            let results = crate::par::try_map(batch, |&i| {
                let s = &samples[i];
                model.loss_and_grads(&s.frames, label_y(s))
            })?;
            let scale = 1.0 / batch.len() as f64;
            for p in model.params.iter_mut() {
                p.zero_grad();
            }
            for (&i, (loss, grads)) in batch.iter().zip(results) {
                match samples[i].label {
                    Label::Positive => pos += loss,
                    Label::Negative => neg += loss,
                }
                for (p, g) in model.params.iter_mut().zip(grads.into_vec()) {
                    p.grad.scaled_add(scale, &g);
                }
            }
            clip_grad_norm(model.params.iter_mut(), model.config.grad_clip);
            opt.step(model.params.iter_mut());
        }
        trace.epochs.push(EpochLoss { epoch, positive: pos, negative: neg, total: pos + neg });
    }
    model.mark_trained();
    Ok(trace)
}
