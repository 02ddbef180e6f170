//! Masked MSE training, data splits, training curves and the random-search
//! tuner.

mod curve;
mod optim;
mod trainer;
mod tune;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augmentation::{augment_offline, AugmentationSpec};
use crate::dataset::{complete_subset, Dataset};
use crate::error::{Error, Result};
use crate::imputation::{impute, ImputeMethod};
use crate::models::network::seeded_rng;
use crate::tensor::{Element, Tensor};

pub use curve::{EpochRecord, TrainingCurve};
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{train, train_with_validation, TrainOutcome};
pub use tune::{random_search_tune, SearchSpace, TrialRecord, TuneOutcome};

/// Masked mean squared error `(1/m) sum mask * (y - y_hat)^2`, `m = sum mask`,
/// and its gradient `2 * mask * (y_hat - y) / m` with respect to `pred`.
pub fn mse_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>, mask: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    for (axis, other) in [("target", target), ("mask", mask)] {
        if other.shape() != pred.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse_loss",
                axis,
                expected: pred.len(),
                actual: other.len(),
            });
        }
    }
    let m: T = mask.data().iter().copied().sum();
    if m <= T::zero() {
        return Err(Error::EmptyMask);
    }
    let two = T::one() + T::one();
    let mut sum = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for ((&p, &y), &k) in pred.data().iter().zip(target.data()).zip(mask.data()) {
        let d = p - y;
        sum += k * d * d;
        grad.push(two * k * d / m);
    }
    Ok((sum / m, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Deterministic shuffled partition. The validation side gets
/// `round(n * fraction)` samples, clamped so neither side is empty; each side
/// keeps the original relative order.
pub fn split_train_val(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::EmptyDataset("need at least 2 samples to split"));
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, 0));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (s, v) in ds.samples.iter().zip(is_val) {
        if v {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((ds.with_samples(train), ds.with_samples(val)))
}

/// Builds the training and validation sets of one experiment cell: split,
/// impute the training side only, then optionally append augmented variants
/// of the training side's complete cases. Validation labels are left as
/// they are, so scoring only uses real coordinates.
pub fn prepare_split(
    ds: &Dataset,
    method: ImputeMethod,
    k: usize,
    augment: Option<&AugmentationSpec>,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (train_raw, val) = split_train_val(ds, validation_fraction, seed)?;
    let mut train = impute(&train_raw, method, k)?;
    if let Some(spec) = augment {
        let complete = complete_subset(&train_raw);
        let augmented = augment_offline(&complete, spec)?;
        train.samples.extend(augmented.samples.into_iter().skip(complete.len()));
    }
    Ok((train, val))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Stop after this many epochs without a new best validation RMSE.
    pub early_stop_patience: Option<usize>,
    /// Stop once validation RMSE (pixels) drops below this.
    pub target_val_rmse_px: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            optimizer: OptimizerKind::default(),
            seed: 0,
            validation_fraction: 0.2,
            early_stop_patience: Some(10),
            target_val_rmse_px: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be >= 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must be in (0, 1)"));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::invalid("early-stop patience must be >= 1"));
        }
        self.optimizer.validate()
    }
}
