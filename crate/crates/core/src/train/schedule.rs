//! Validation-driven learning-rate reduction and early stopping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// A loss counts as an improvement when it beats the best by more than this.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.5,
            patience: 3,
            min_lr: 1e-6,
            threshold: 1e-8,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config("train.plateau.factor must lie in (0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.plateau.patience must be >= 1".into()));
        }
        if !(self.min_lr >= 0.0) || !(self.threshold >= 0.0) {
            return Err(Error::Config("train.plateau.min_lr and threshold must be >= 0".into()));
        }
        Ok(())
    }
}

/// Halves (by default) the learning rate after `patience` epochs without
/// improvement, then starts counting again.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    pub lr: f64,
    pub best: Option<f64>,
    pub stale_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig, lr: f64) -> Self {
        PlateauScheduler {
            config,
            lr,
            best: None,
            stale_epochs: 0,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate
    /// for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if improves(val_loss, self.best, self.config.threshold) {
            self.best = Some(val_loss);
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}

fn improves(loss: f64, best: Option<f64>, threshold: f64) -> bool {
    match best {
        None => loss.is_finite(),
        Some(b) => loss < b - threshold,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::EarlyStopping => "early_stopping",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochVerdict {
    /// New best validation loss; keep these parameters.
    Improved,
    Continue,
    Stop(StopReason),
}

/// Early stopping with a hard epoch cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub max_epochs: usize,
    pub threshold: f64,
    pub best: Option<f64>,
    /// 1-based epoch of `best`.
    pub best_epoch: usize,
    pub stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize, threshold: f64) -> Self {
        EarlyStopping {
            patience,
            max_epochs,
            threshold,
            best: None,
            best_epoch: 0,
            stale_epochs: 0,
        }
    }

    /// Judges 1-based `epoch` by its validation loss. An improving final
    /// epoch reports `Improved`; the caller then stops on the epoch cap.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> EpochVerdict {
        if improves(val_loss, self.best, self.threshold) {
            self.best = Some(val_loss);
            self.best_epoch = epoch;
            self.stale_epochs = 0;
            return EpochVerdict::Improved;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience {
            EpochVerdict::Stop(StopReason::EarlyStopping)
        } else if epoch >= self.max_epochs {
            EpochVerdict::Stop(StopReason::MaxEpochs)
        } else {
            EpochVerdict::Continue
        }
    }
}
