//! Per-item model training: Nesterov SGD with the cyclical learning rate,
//! early stopping on validation loss, and the routing rule that sends
//! degenerate targets to constant models instead of networks.
//!
//! Reproducibility contract: everything random derives from the config
//! seed through fixed, documented streams (0 initialization, 1 validation
//! split, 2 epoch shuffles, 3 dropout), and the per-item seed is hashed
//! from the run seed and the item address. Training two items in either
//! order, or in parallel, therefore yields identical models.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::net::{
    backward, forward_eval, forward_train, init_network, update_running_stats, Head, LrSchedule,
    NetworkConfig, NetworkParams,
};
use crate::rng::{derive_seed, stream_rng};
use crate::targets::{BoundedScaler, ItemAddress, ItemScaler, Section, StandardScaler};

const INIT_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Optimized objective (data term plus L1) averaged over the epoch's
    /// mini-batches, evaluated at the lookahead points actually used.
    pub train_loss: f64,
    /// Plain mean-squared error on the held-out split, eval mode.
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters restored to the best-validation snapshot.
    pub params: NetworkParams,
    pub history: Vec<EpochStats>,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

/// Early-stopping rule: stop after `patience` consecutive epochs whose
/// validation loss exceeds the running best. Ties neither improve the best
/// nor count as increases.
#[derive(Clone, Copy, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    streak: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// New best: callers snapshot the current parameters.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper { patience, best: f64::INFINITY, streak: 0 }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.streak = 0;
            StopDecision::Improved
        } else if val_loss == self.best {
            self.streak = 0;
            StopDecision::Continue
        } else {
            self.streak += 1;
            if self.streak >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

fn gather_rows(x: &Mat, indices: &[usize]) -> Mat {
    Mat::from_fn(indices.len(), x.cols(), |i, j| x[(indices[i], j)])
}

/// Trains one network on pre-scaled targets. `x` holds one sample per row.
pub fn train_network(cfg: &NetworkConfig, x: &Mat, targets: &[f64]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = x.rows();
    if targets.len() != n {
        return Err(Error::InvalidData(format!("{n} rows but {} targets", targets.len())));
    }
    if n < 2 * cfg.batch_size {
        return Err(Error::InvalidData(format!(
            "training needs at least {} rows (2 x batch_size), got {n}",
            2 * cfg.batch_size
        )));
    }

    // Validation split drawn once, before any training.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.rng_seed, SPLIT_STREAM));
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 2);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_x = gather_rows(x, val_idx);
    let val_y: Vec<f64> = val_idx.iter().map(|&i| targets[i]).collect();
    let mut train_order: Vec<usize> = train_idx.to_vec();

    let mut params = init_network(cfg, &mut stream_rng(cfg.rng_seed, INIT_STREAM))?;
    let mut velocity = vec![0.0; params.trainable().len()];
    let mut schedule = LrSchedule::new(cfg.lr_lo, cfg.lr_hi, cfg.lr_step);
    let mut shuffle_rng = stream_rng(cfg.rng_seed, SHUFFLE_STREAM);
    let mut dropout_rng = stream_rng(cfg.rng_seed, DROPOUT_STREAM);

    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut snapshot = params.clone();
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        train_order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in train_order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                // A single leftover row cannot produce batch statistics.
                continue;
            }
            let xb = gather_rows(x, chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();

            // Gradient at the lookahead point theta + mu*v.
            let theta = params.trainable();
            let look: Vec<f64> =
                theta.iter().zip(&velocity).map(|(t, v)| t + cfg.momentum * v).collect();
            let mut look_params = params.clone();
            look_params.set_trainable(&look);
            let cache = forward_train(cfg, &look_params, &xb, Some(&mut dropout_rng))?;
            let (loss, grads) = backward(cfg, &look_params, &cache, &yb);
            if !loss.is_finite() {
                return Err(Error::InvalidData(format!(
                    "training diverged: non-finite loss in epoch {epoch}"
                )));
            }
            update_running_stats(cfg, &mut params, &cache);

            let lr = schedule.lr_at();
            schedule.advance();
            let flat = grads.flatten();
            let mut theta = theta;
            for ((v, g), t) in velocity.iter_mut().zip(&flat).zip(theta.iter_mut()) {
                *v = cfg.momentum * *v - lr * g;
                *t += *v;
            }
            params.set_trainable(&theta);

            epoch_loss += loss;
            batches += 1;
        }

        let val_pred = forward_eval(cfg, &params, &val_x);
        let val_loss = val_pred
            .iter()
            .zip(&val_y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / val_y.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::InvalidData(format!(
                "training diverged: non-finite validation loss in epoch {epoch}"
            )));
        }
        history.push(EpochStats { epoch, train_loss: epoch_loss / batches.max(1) as f64, val_loss });

        match stopper.observe(val_loss) {
            StopDecision::Improved => snapshot = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let epochs_run = history.len();
    Ok(TrainOutcome { params: snapshot, history, best_val_loss: stopper.best(), epochs_run })
}

/// A fitted model for one table item: either a trained network with its
/// target scaler, or a constant for items whose targets carry no signal.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedItemModel {
    pub address: ItemAddress,
    pub scaler: ItemScaler,
    pub network: Option<(NetworkConfig, NetworkParams)>,
    pub history: Vec<EpochStats>,
    pub best_val_loss: Option<f64>,
    /// Identifier of the feature pipeline the model was trained against;
    /// prediction refuses scores from a different pipeline.
    pub pipeline_ref: String,
}

/// Head activation used for a section's items: bounded ratios get the
/// sigmoid, signed standardized ratios the identity.
pub fn section_head(section: Section) -> Head {
    match section {
        Section::GrossOutput | Section::Intermediate => Head::Sigmoid,
        Section::FinalDemand | Section::ValueAdded => Head::Identity,
    }
}

/// Relative spread below which targets are treated as constant and no
/// network is trained.
const CONSTANT_SPREAD: f64 = 1e-12;

fn constant_value(targets: &[f64]) -> Option<f64> {
    let first = targets[0];
    if targets.iter().all(|t| *t == first) {
        return Some(first);
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    if var.sqrt() < CONSTANT_SPREAD * mean.abs().max(1.0) {
        Some(mean)
    } else {
        None
    }
}

/// Trains the model for one item. `template` supplies the hyperparameters;
/// the head, input width and seed are derived here (seed = hash of the
/// template's seed and the item address, so items are independent).
pub fn train_item(
    address: ItemAddress,
    scores: &Mat,
    raw_targets: &[f64],
    template: &NetworkConfig,
    pipeline_ref: &str,
) -> Result<TrainedItemModel> {
    if raw_targets.is_empty() || scores.rows() != raw_targets.len() {
        return Err(Error::InvalidData(format!(
            "item {address}: {} score rows vs {} targets",
            scores.rows(),
            raw_targets.len()
        )));
    }
    if let Some(v) = constant_value(raw_targets) {
        return Ok(TrainedItemModel {
            address,
            scaler: ItemScaler::Constant(v),
            network: None,
            history: Vec::new(),
            best_val_loss: None,
            pipeline_ref: pipeline_ref.to_string(),
        });
    }

    let mut cfg = template.clone();
    cfg.input_dim = scores.cols();
    cfg.head = section_head(address.section);
    cfg.rng_seed = derive_seed(template.rng_seed, &address.to_string());

    let scaler = match cfg.head {
        Head::Sigmoid => ItemScaler::Bounded(BoundedScaler::fit(raw_targets)?),
        Head::Identity => ItemScaler::Standard(StandardScaler::fit(raw_targets)?),
    };
    let scaled: Vec<f64> = raw_targets.iter().map(|t| scaler.scale(*t)).collect();

    let outcome = train_network(&cfg, scores, &scaled)?;
    Ok(TrainedItemModel {
        address,
        scaler,
        network: Some((cfg, outcome.params)),
        history: outcome.history,
        best_val_loss: Some(outcome.best_val_loss),
        pipeline_ref: pipeline_ref.to_string(),
    })
}

impl TrainedItemModel {
    /// Predicts the item's ratio for one score vector: eval-mode forward,
    /// then the scaler's inverse. Constants ignore the input.
    pub fn predict(&self, scores: &[f64], pipeline_ref: &str) -> Result<f64> {
        if pipeline_ref != self.pipeline_ref {
            return Err(Error::Config(format!(
                "model {} was trained against pipeline {} but scores come from {}",
                self.address, self.pipeline_ref, pipeline_ref
            )));
        }
        match &self.network {
            None => match self.scaler {
                ItemScaler::Constant(c) => Ok(c),
                _ => Err(Error::InvalidData(format!(
                    "model {} has no network but a non-constant scaler",
                    self.address
                ))),
            },
            Some((cfg, params)) => {
                if scores.len() != cfg.input_dim {
                    return Err(Error::InvalidData(format!(
                        "model {} expects {} scores, got {}",
                        self.address,
                        cfg.input_dim,
                        scores.len()
                    )));
                }
                let x = Mat::from_rows(&[scores.to_vec()]);
                let out = forward_eval(cfg, params, &x)[0];
                Ok(self.scaler.unscale(out))
            }
        }
    }
}
