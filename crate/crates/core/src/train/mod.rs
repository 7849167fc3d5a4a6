//! Supervised training: loss, optimiser, schedule, augmentation, the epoch
//! loop with best-validation checkpointing, and classifier metrics.

mod augment;
mod metrics;
mod optim;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{save_checkpoint, GradMode, Mode, Model};
use crate::synthdata::Sample;
use crate::tensor::Tensor;

pub use augment::{augment, AugmentFlags, Augmentation, MAX_SHIFT};
pub use metrics::{accuracy, auc, evaluate_classifier, predict, ClassifierMetrics};
pub use optim::{cross_entropy, lr_schedule, sgd_momentum_step};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub augment: AugmentFlags,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 16,
            lr: 0.005,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay_factor: 10.0,
            lr_decay_every: 5,
            augment: AugmentFlags::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `default` or `lvot` (lower learning rate).
    pub fn preset(name: &str) -> Result<TrainConfig> {
        match name {
            "default" | "fobj" => Ok(TrainConfig::default()),
            "lvot" => Ok(TrainConfig {
                lr: 0.0002,
                weight_decay: 0.0005,
                ..TrainConfig::default()
            }),
            _ => Err(Error::Config(format!("unknown training preset `{name}`"))),
        }
    }

    pub fn from_json(text: &str) -> Result<TrainConfig> {
        let c: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.weight_decay < 0.0
            || self.lr_decay_factor.is_nan()
            || self.lr_decay_factor <= 0.0
            || self.lr_decay_every == 0
        {
            return Err(Error::Config(
                "weight_decay, lr_decay_factor or lr_decay_every out of range".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Mini-batch losses of the first epoch.
    pub first_epoch_losses: Vec<f64>,
    /// Loss on a fixed training batch before the first step and after every
    /// step of the first epoch.
    pub first_epoch_log: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

/// Unaugmented training samples whose loss is logged during the first epoch.
struct LogBatch {
    images: Vec<Tensor>,
    labels: Vec<usize>,
}

impl LogBatch {
    const SIZE: usize = 64;

    fn draw(train: &[Sample], seed: u64) -> LogBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(Self::SIZE);
        idx.sort_unstable();
        LogBatch {
            images: idx.iter().map(|&i| train[i].image.clone()).collect(),
            labels: idx.iter().map(|&i| train[i].label).collect(),
        }
    }

    /// Batch-statistics loss, the objective the optimiser descends.
    fn loss(&self, model: &Model) -> Result<f64> {
        let trace = model.forward_batch(&self.images, Mode::Train)?;
        Ok(cross_entropy(trace.logits(), &self.labels)?.0)
    }
}

/// Trains `model` in place and leaves it holding the best-validation weights.
///
/// Without any epoch the initial weights are kept (and checkpointed, if a
/// path is given). Batches are drawn in a seeded order on one thread.
pub fn train_loop(
    model: &mut Model,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty splits (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Tensor> = model
        .params()
        .iter()
        .map(|(_, p)| Tensor::zeros(p.shape()))
        .collect();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut report = TrainReport {
        epochs: Vec::new(),
        first_epoch_losses: Vec::new(),
        first_epoch_log: Vec::new(),
        best_epoch: None,
        best_val_accuracy: None,
        checkpoint: checkpoint.map(Path::to_path_buf),
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let log_batch = LogBatch::draw(train, config.seed);
    if config.epochs > 0 {
        report.first_epoch_log.push(log_batch.loss(model)?);
    }
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config);
        order.shuffle(&mut rng);
        model.mode = Mode::Train;
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for batch in order.chunks(config.batch_size) {
            let samples: Vec<Sample> = batch
                .iter()
                .map(|&i| augment(&train[i], config.augment, &mut rng))
                .collect();
            let xs: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let trace = model.forward_batch(&xs, Mode::Train)?;
            let (loss, dlogits) = cross_entropy(trace.logits(), &labels)?;
            let grads = model.backward_batch(&trace, dlogits, GradMode::Standard, &[])?;
            model.update_running_stats(&trace);
            sgd_momentum_step(
                &mut model.params_mut(),
                &grads.params,
                &mut velocity,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
            if epoch == 0 {
                report.first_epoch_losses.push(loss);
                report.first_epoch_log.push(log_batch.loss(model)?);
            }
            loss_sum += loss;
            n_batches += 1;
        }
        model.mode = Mode::Eval;
        let val_accuracy = accuracy(model, val)?;
        report.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / n_batches as f64,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|b| val_accuracy > b.1) {
            let mut snapshot = model.clone();
            snapshot.meta.seed = config.seed;
            snapshot.meta.epoch = epoch + 1;
            snapshot.meta.val_accuracy = Some(val_accuracy);
            if let Some(p) = checkpoint {
                save_checkpoint(&snapshot, p)?;
            }
            best = Some((epoch, val_accuracy, snapshot));
        }
    }
    model.mode = Mode::Eval;
    match best {
        Some((epoch, acc, snapshot)) => {
            *model = snapshot;
            report.best_epoch = Some(epoch);
            report.best_val_accuracy = Some(acc);
        }
        None => {
            model.meta.seed = config.seed;
            if let Some(p) = checkpoint {
                save_checkpoint(model, p)?;
            }
        }
    }
    Ok(report)
}
