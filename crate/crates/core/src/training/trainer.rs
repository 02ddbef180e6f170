use std::time::Instant;

use rand::seq::SliceRandom;

use super::curve::{EpochRecord, TrainingCurve};
use super::optim::Optimizer;
use super::{mse_loss, split_train_val, TrainConfig};
use crate::dataset::{to_batch, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{normalized_mse, normalized_to_px, EVAL_BATCH};
use crate::models::network::seeded_rng;
use crate::models::Model;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation RMSE.
    pub model: Model,
    pub curve: TrainingCurve,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_val_rmse_px(&self) -> f64 {
        self.curve.best().map_or(f64::NAN, |r| r.val_rmse_px)
    }
}

/// Splits `ds` with the config's fraction and seed, then trains.
pub fn train(model: Model, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = split_train_val(ds, cfg.validation_fraction, cfg.seed)?;
    train_with_validation(model, &train_set, &val_set, cfg)
}

/// Mini-batch training on `train_set`, scored on `val_set` after every epoch.
/// A non-finite validation loss is reported as batch 0.
pub fn train_with_validation(
    mut model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training split is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation split is empty"));
    }
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut curve = TrainingCurve::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut rng = seeded_rng(cfg.seed, epoch as u64);
        order.shuffle(&mut rng);
        let (mut sq_sum, mut mask_sum) = (0.0f64, 0.0f64);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = to_batch(chunk.iter().map(|&i| &train_set.samples[i]))?;
            let m: f32 = batch.mask.data().iter().sum();
            if m == 0.0 {
                continue;
            }
            let (pred, tape) = model.forward_train(&batch.images, &mut rng)?;
            let (loss, grad) = mse_loss(&pred, &batch.targets, &batch.mask)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            let grads = model.backward(&tape, &grad)?;
            opt.step(&mut model, &grads.params)?;
            sq_sum += f64::from(loss) * f64::from(m);
            mask_sum += f64::from(m);
        }
        if mask_sum == 0.0 {
            return Err(Error::EmptyMask);
        }
        let val_mse = normalized_mse(&model, val_set, EVAL_BATCH)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let val_rmse_px = normalized_to_px(val_mse.sqrt());
        curve.records.push(EpochRecord {
            epoch,
            train_mse: sq_sum / mask_sum,
            val_mse,
            val_rmse_px,
            seconds: started.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_rmse_px < *b);
        if improved {
            best = Some((val_rmse_px, epoch, model.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if cfg.target_val_rmse_px.is_some_and(|t| val_rmse_px < t) {
            break;
        }
        if cfg.early_stop_patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }

    let (_, best_epoch, best_model) = best.ok_or(Error::EmptyDataset("no epochs ran"))?;
    Ok(TrainOutcome {
        model: best_model,
        curve,
        best_epoch,
    })
}
