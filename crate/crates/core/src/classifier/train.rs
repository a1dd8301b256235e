use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{Mode, Model};
use super::{LabeledSequence, Sequence};
use crate::error::{Error, Result};
use crate::fusion::ClassPosterior;
use crate::rng::stream_rng;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-epoch losses of one training run. Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch - 1]
    }
}

/// Adam with decoupled weight decay. Biases and normalization parameters are
/// not decayed.
struct AdamW {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    decay: Vec<bool>,
    step: i32,
}

impl AdamW {
    fn new(model: &Model) -> Self {
        let decay = (0..model.num_tensors())
            .map(|i| {
                let name = model.tensor_name(i);
                !(name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta"))
            })
            .collect();
        AdamW {
            m: model.zero_grads(),
            v: model.zero_grads(),
            decay,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64, weight_decay: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (i, p) in params.iter_mut().enumerate() {
            let wd = if self.decay[i] { weight_decay } else { 0.0 };
            Zip::from(p)
                .and(&grads[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|p, &g, m, v| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    *p -= lr * (update + wd * *p);
                });
        }
    }
}

/// Mean log loss of the model over a labelled set, in evaluation mode.
pub fn log_loss_of(model: &Model, data: &[&LabeledSequence]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for ex in data {
        let p = model.forward(&ex.sequence)?;
        total -= p.0[ex.label.index()].ln();
    }
    Ok(total / data.len() as f64)
}

/// Trains with minibatch AdamW, evaluating validation log loss after every
/// epoch, and returns the parameters of the best epoch.
///
/// Training stops once `patience` epochs pass without a strict improvement
/// of the validation loss, or after `max_epochs`. Shuffling and dropout use
/// streams derived from the configured seed, so identical inputs give
/// identical results.
pub fn train(
    mut model: Model,
    train_set: &[&LabeledSequence],
    val_set: &[&LabeledSequence],
) -> Result<(Model, TrainHistory)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument("training and validation sets must be non-empty".into()));
    }
    let cfg = model.config().clone();
    let mut shuffle_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = stream_rng(cfg.seed, DROPOUT_STREAM);
    let mut optimizer = AdamW::new(&model);
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
    };
    let mut best: Option<(f64, Model)> = None;

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.learning_rate_at(epoch - 1);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            for &i in batch {
                let ex = train_set[i];
                let loss = model.accumulate_gradient(
                    &ex.sequence,
                    ex.label.index(),
                    &mut Mode::Train(&mut dropout_rng),
                    &mut grads,
                )?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                epoch_loss += loss;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence { epoch });
            }
            optimizer.update(model.params_mut(), &grads, lr, cfg.weight_decay);
        }
        let val_loss = log_loss_of(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.train_loss.push(epoch_loss / train_set.len() as f64);
        history.val_loss.push(val_loss);
        history.stopped_epoch = epoch;

        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= cfg.patience {
            break;
        }
    }

    let (_, best_model) = best.expect("at least one epoch");
    Ok((best_model, history))
}

/// Posteriors in input order, evaluation mode.
pub fn predict<'a>(model: &Model, data: impl IntoIterator<Item = &'a Sequence>) -> Result<Vec<ClassPosterior>> {
    data.into_iter().map(|s| model.forward(s)).collect()
}
