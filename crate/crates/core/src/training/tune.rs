use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{split_train_val, train_with_validation, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::network::seeded_rng;
use crate::models::{custom_cnn_spec, Model, ModelSpec};

/// Ranges for the custom-CNN random search. Block `i` gets
/// `base_filters * 2^i` filters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Inclusive range of conv blocks.
    pub conv_blocks: (usize, usize),
    pub base_filters: Vec<usize>,
    pub dense_width: Vec<usize>,
    /// Inclusive bounds, sampled log-uniformly.
    pub learning_rate: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            conv_blocks: (3, 5),
            base_filters: vec![4, 8, 16],
            dense_width: vec![32, 64, 128],
            learning_rate: (3e-4, 3e-3),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.conv_blocks;
        let (llo, lhi) = self.learning_rate;
        if lo == 0 || lo > hi || hi > 6 {
            return Err(Error::invalid("conv blocks must satisfy 1 <= min <= max <= 6"));
        }
        if self.base_filters.is_empty() || self.dense_width.is_empty() {
            return Err(Error::invalid("filter and dense-width choices must be non-empty"));
        }
        if self.base_filters.contains(&0) || self.dense_width.contains(&0) {
            return Err(Error::invalid("widths must be >= 1"));
        }
        if !(llo > 0.0 && llo <= lhi && lhi.is_finite()) {
            return Err(Error::invalid("learning-rate range must be positive and ordered"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub conv_blocks: usize,
    pub base_filters: usize,
    pub dense_width: usize,
    pub learning_rate: f64,
    pub params_total: usize,
    pub best_epoch: usize,
    pub val_rmse_px: f64,
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub best_spec: ModelSpec,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

/// `budget` independent trials on one fixed split; every trial uses the
/// epochs and optimizer kind of `cfg` with its sampled learning rate.
pub fn random_search_tune(space: &SearchSpace, budget: usize, ds: &Dataset, cfg: &TrainConfig) -> Result<TuneOutcome> {
    if budget == 0 {
        return Err(Error::invalid("tuning budget must be >= 1"));
    }
    space.validate()?;
    cfg.validate()?;
    let (train_set, val_set) = split_train_val(ds, cfg.validation_fraction, cfg.seed)?;
    let mut rng = seeded_rng(cfg.seed, u64::MAX);
    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(f64, usize, ModelSpec)> = None;

    for trial in 0..budget {
        let blocks = rng.random_range(space.conv_blocks.0..=space.conv_blocks.1);
        let base = space.base_filters[rng.random_range(0..space.base_filters.len())];
        let dense_width = space.dense_width[rng.random_range(0..space.dense_width.len())];
        let (lo, hi) = space.learning_rate;
        let lr = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();

        let filters: Vec<usize> = (0..blocks).map(|i| base << i).collect();
        let spec = custom_cnn_spec(&format!("tuned-{trial}"), &filters, dense_width)?;
        let params_total = spec.parameter_breakdown()?.total().total;
        let trial_cfg = TrainConfig {
            optimizer: cfg.optimizer.with_learning_rate(lr),
            ..cfg.clone()
        };
        let model = Model::init(spec.clone(), cfg.seed.wrapping_add(trial as u64))?;
        let outcome = train_with_validation(model, &train_set, &val_set, &trial_cfg)?;
        let val_rmse_px = outcome.best_val_rmse_px();
        trials.push(TrialRecord {
            trial,
            conv_blocks: blocks,
            base_filters: base,
            dense_width,
            learning_rate: lr,
            params_total,
            best_epoch: outcome.best_epoch,
            val_rmse_px,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_rmse_px < *b) {
            best = Some((val_rmse_px, trial, spec));
        }
    }
    let (_, best_trial, best_spec) = best.ok_or(Error::invalid("no trials ran"))?;
    Ok(TuneOutcome {
        best_spec,
        best_trial,
        trials,
    })
}
