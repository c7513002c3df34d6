//! Mini-batch Adam training with a fixed iteration budget and early stopping
//! on validation loss.

use capsnet_core::capsule::CapsLossConfig;
use capsnet_core::models::{Model, Pass};
use capsnet_core::nn::{one_hot, AdamConfig, AdamState};
use capsnet_core::rng::streams;
use capsnet_core::{SeededRng, Tape};
use capsnet_data::LabeledImageSet;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub batch_size: usize,
    /// Total optimiser steps allowed.
    pub iteration_budget: usize,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    /// A validation loss counts as an improvement when it is below the best
    /// so far by at least this much.
    pub min_delta: f64,
    pub adam: AdamConfig,
    pub caps: CapsLossConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based pass over the training set.
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub iterations: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Patience,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Patience bookkeeping, one call per validation pass.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
    epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// New best; keep these parameters.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Verdict {
        self.epoch += 1;
        if val_loss <= self.best - self.min_delta || (self.best.is_infinite() && val_loss.is_finite()) {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Mean total loss over `set`, with dropout off. The capsule decoder is
/// masked by the true label, as during training.
pub fn dataset_loss(model: &Model<f32>, set: &LabeledImageSet, batch_size: usize, caps: &CapsLossConfig) -> Result<f64> {
    let k = model.num_classes();
    let mut total = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i]).collect();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let x = tape.constant(set.batch_tensor(chunk));
        let t = tape.constant(one_hot(&labels, k)?);
        let out = model.forward(&mut tape, &vars, x, Pass::Eval { labels: &labels })?;
        let loss = model.loss(&mut tape, &out, x, t, caps)?;
        total += tape.value(loss.total).item()? as f64 * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Trains `model` and returns the parameters of the epoch with the lowest
/// validation loss.
///
/// Each pass visits the training set once in a fresh shuffled order, in
/// batches of `batch_size` (the last one possibly smaller); validation
/// follows every pass, including a pass cut short by the budget.
pub fn train_model(
    mut model: Model<f32>,
    train: &LabeledImageSet,
    val: &LabeledImageSet,
    settings: &TrainSettings,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<f32>, History)> {
    if train.is_empty() || val.is_empty() {
        return Err(HarnessError::contract("train_model", "empty training or validation set"));
    }
    let k = model.num_classes();
    if train.num_classes() != k || val.num_classes() != k {
        return Err(HarnessError::contract(
            "train_model",
            format!("model has {k} classes, data has {}", train.num_classes()),
        ));
    }
    if settings.batch_size == 0 || settings.iteration_budget == 0 {
        return Err(HarnessError::contract("train_model", "batch size and budget must be positive"));
    }

    let root = SeededRng::new(seed);
    let mut shuffle_rng = root.fork(streams::SHUFFLE);
    let mut dropout_rng = root.fork(streams::DROPOUT);
    let mut adam = AdamState::new(settings.adam, &model.values());
    let mut stopper = EarlyStopping::new(settings.patience, settings.min_delta);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut iterations = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    let stop = loop {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(settings.batch_size) {
            if iterations == settings.iteration_budget {
                break;
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let x = tape.constant(train.batch_tensor(chunk));
            let t = tape.constant(one_hot(&labels, k)?);
            let pass = Pass::Train {
                rng: &mut dropout_rng,
                labels: &labels,
            };
            let out = model.forward(&mut tape, &vars, x, pass)?;
            let loss = model.loss(&mut tape, &out, x, t, &settings.caps)?;
            let value = tape.value(loss.total).item()? as f64;
            if !value.is_finite() {
                return Err(HarnessError::contract(
                    "train_model",
                    format!("loss became {value} at iteration {}", iterations + 1),
                ));
            }
            let grads = tape.gradients(loss.total, &vars)?;
            drop(tape);
            adam.step_refs(model.values_mut(), &grads)?;
            iterations += 1;
            loss_sum += value * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_loss = dataset_loss(&model, val, settings.batch_size, &settings.caps)?;
        let record = EpochRecord {
            epoch: epochs.len() + 1,
            iterations,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
        };
        on_epoch(&record);
        epochs.push(record);
        match stopper.observe(val_loss) {
            Verdict::Improved => best = model.clone(),
            Verdict::Stop => break StopReason::Patience,
            Verdict::Continue => {}
        }
        if iterations == settings.iteration_budget {
            break StopReason::Budget;
        }
    };
    let (best_epoch, best_val_loss) = stopper.best();
    Ok((
        best,
        History {
            epochs,
            best_epoch,
            best_val_loss,
            iterations,
            stop,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_decrease_never_stops() {
        let mut s = EarlyStopping::new(20, 1e-6);
        for i in 0..50 {
            assert_eq!(s.observe(1.0 / (i + 1) as f64), Verdict::Improved);
        }
        assert_eq!(s.best().0, 50);
    }

    #[test]
    fn patience_rule() {
        // 1.0, 0.5, then twenty passes no better than 0.5.
        let mut s = EarlyStopping::new(20, 1e-6);
        assert_eq!(s.observe(1.0), Verdict::Improved);
        assert_eq!(s.observe(0.5), Verdict::Improved);
        for pass in 3..=22 {
            let v = s.observe(0.5 + (pass % 3) as f64 * 0.1);
            assert_eq!(v == Verdict::Stop, pass == 22, "pass {pass}");
        }
        assert_eq!(s.best(), (2, 0.5));
    }

    #[test]
    fn sub_threshold_gains_do_not_count() {
        let mut s = EarlyStopping::new(2, 1e-6);
        s.observe(1.0);
        assert_eq!(s.observe(1.0 - 5e-7), Verdict::Continue);
        assert_eq!(s.observe(1.0 - 9e-7), Verdict::Stop);
        assert_eq!(s.best(), (1, 1.0));
    }
}
