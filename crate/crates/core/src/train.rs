//! Mini-batch training with Adam on per-cell cross-entropy.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{seeded_rng, Dataset, Sample, Split};
use crate::tensor::{adam_step, softmax_cross_entropy, AdamState};
use crate::unet::ModelState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    /// Desk default: 30 epochs.
    fn default() -> Self {
        Self { batch_size: 32, epochs: 30, lr: 1e-3, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self { epochs: 100, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the model before the first step.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    /// `epoch,train_loss,val_loss,seconds` table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.6},{:.6},{:.3}\n", e.epoch, e.train_loss, e.val_loss, e.seconds));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model after the final epoch.
    pub last: ModelState,
    /// Model after the epoch with the lowest validation loss.
    pub best: ModelState,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

/// Mean unscaled cross-entropy of `model` against each sample's label.
pub fn mean_loss(model: &ModelState, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot average loss over zero samples".into()));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let logits = model.forward(&s.field)?;
            Ok(softmax_cross_entropy(logits.data(), s.label_cell.flat)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Loss and parameter gradients averaged over `batch`. Per-sample work may run
/// in parallel; reduction is always in batch order.
pub fn batch_loss_and_grad(model: &ModelState, batch: &[&Sample]) -> Result<(f64, Vec<Vec<f64>>)> {
    let per_sample: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_iter()
        .map(|s| model.loss_and_grad(&s.field, s.label_cell.flat))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    for g in &mut grads {
        for x in g.iter_mut() {
            *x *= scale;
        }
    }
    Ok((loss * scale, grads))
}

pub fn train(model: ModelState, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: ModelState,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut order = data.split_samples(Split::Train);
    let val = data.split_samples(Split::Val);
    if order.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training needs train and val samples, got {} and {}",
            order.len(),
            val.len()
        )));
    }
    let mut rng = seeded_rng(cfg.seed, 0);
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let mut history = TrainHistory { initial_val_loss: mean_loss(&model, &val)?, epochs: Vec::new() };
    let mut best = (model.clone(), 0, f64::INFINITY);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_loss_and_grad(&model, batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} at epoch {epoch}, batch {}", b + 1)));
            }
            adam_step(&mut model.params, &grads, &mut adam)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
            total += loss * batch.len() as f64;
        }
        let val_loss = mean_loss(&model, &val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} after epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);
        if val_loss < best.2 {
            best = (model.clone(), epoch, val_loss);
        }
    }
    Ok(TrainOutcome { last: model, best: best.0, best_epoch: best.1, history })
}
