use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss, LossKind};
use super::optim::{Optimizer, OptimizerKind};
use super::schedule::{EarlyStopping, EpochVerdict, PlateauConfig, PlateauScheduler, StopReason};
use crate::autodiff::{Graph, ParamId, ParamStore};
use crate::checkpoint::{restore, snapshot, StoredParam};
use crate::data::{DatasetScaler, WindowedDataset};
use crate::error::{Error, Result};
use crate::eval::{mae, smape};
use crate::model::HyperEnergyModel;
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    /// Falls back to the optimizer's default when unset.
    pub learning_rate: Option<f64>,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub plateau: PlateauConfig,
    /// Rows per forward pass when predicting validation and test sets.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Mae,
            optimizer: OptimizerKind::Adam,
            learning_rate: None,
            weight_decay: 0.01,
            batch_size: 32,
            max_epochs: 300,
            patience: 5,
            plateau: PlateauConfig::default(),
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(self.optimizer.default_learning_rate())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("train.learning_rate must be > 0, got {lr}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("train batch sizes must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("train.max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be >= 1".into()));
        }
        self.plateau.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// On denormalized values, percent.
    pub val_smape: f64,
    /// On denormalized values, kWh.
    pub val_mae: f64,
    /// Rate used during this epoch.
    pub learning_rate: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: Option<StopReason>,
    /// 1-based epoch whose parameters are kept; 0 before the first epoch.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    pub const CSV_HEADER: [&'static str; 8] = [
        "epoch",
        "train_loss",
        "val_loss",
        "val_smape",
        "val_mae",
        "learning_rate",
        "seconds",
        "best",
    ];

    pub fn write_csv<W: std::io::Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.val_smape.to_string(),
                r.val_mae.to_string(),
                r.learning_rate.to_string(),
                format!("{:.3}", r.seconds),
                u8::from(r.epoch == self.best_epoch).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything needed to continue an interrupted run on the same trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    pub completed_epochs: usize,
    pub current: Vec<StoredParam>,
    pub best: Vec<StoredParam>,
    pub optimizer: Optimizer,
    pub scheduler: PlateauScheduler,
    pub stopper: EarlyStopping,
    pub history: TrainHistory,
}

/// Validation-set scores of one parameter setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationScores {
    pub loss: f64,
    pub smape: f64,
    pub mae: f64,
}

pub fn validation_scores(
    model: &HyperEnergyModel,
    val: &WindowedDataset,
    scaler: &DatasetScaler,
    kind: LossKind,
    batch_size: usize,
) -> Result<ValidationScores> {
    let pred = model.predict(&val.inputs, batch_size)?;
    let loss = kind.value(pred.data(), val.targets.data())?;
    let kwh: Vec<f64> = pred.data().iter().map(|&v| scaler.unscale_target(v)).collect();
    Ok(ValidationScores {
        loss,
        smape: smape(&val.raw_targets, &kwh)?,
        mae: mae(&val.raw_targets, &kwh)?,
    })
}

/// Mini-batch training with plateau scheduling, early stopping and
/// best-epoch restore.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: HyperEnergyModel,
    best: ParamStore,
    config: TrainConfig,
    seed: u64,
    optimizer: Optimizer,
    scheduler: PlateauScheduler,
    stopper: EarlyStopping,
    history: TrainHistory,
    completed: usize,
    last_updated: Vec<ParamId>,
}

impl Trainer {
    pub fn new(model: HyperEnergyModel, config: &TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            best: model.store.clone(),
            model,
            config: config.clone(),
            seed,
            optimizer: Optimizer::new(config.optimizer, config.weight_decay),
            scheduler: PlateauScheduler::new(config.plateau, config.learning_rate()),
            stopper: EarlyStopping::new(config.patience, config.max_epochs, config.plateau.threshold),
            history: TrainHistory::default(),
            completed: 0,
            last_updated: Vec::new(),
        })
    }

    /// Continues from `state`; `model` supplies the structure.
    pub fn resume(model: HyperEnergyModel, config: &TrainConfig, state: TrainState) -> Result<Self> {
        let mut t = Trainer::new(model, config, state.seed)?;
        restore(&mut t.model.store, &state.current)?;
        restore(&mut t.best, &state.best)?;
        t.optimizer = state.optimizer;
        t.scheduler = state.scheduler;
        t.stopper = state.stopper;
        // a longer run may follow a capped one
        t.stopper.max_epochs = config.max_epochs;
        t.history = state.history;
        if t.history.stop_reason == Some(StopReason::MaxEpochs) && state.completed_epochs < config.max_epochs {
            t.history.stop_reason = None;
        }
        t.completed = state.completed_epochs;
        Ok(t)
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            seed: self.seed,
            completed_epochs: self.completed,
            current: snapshot(&self.model.store),
            best: snapshot(&self.best),
            optimizer: self.optimizer.clone(),
            scheduler: self.scheduler.clone(),
            stopper: self.stopper.clone(),
            history: self.history.clone(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.history.stop_reason.is_some()
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn completed_epochs(&self) -> usize {
        self.completed
    }

    pub fn learning_rate(&self) -> f64 {
        self.scheduler.lr
    }

    /// Parameters as they are after the latest step.
    pub fn current(&self) -> &HyperEnergyModel {
        &self.model
    }

    /// Ids the most recent optimizer step updated.
    pub fn last_updated(&self) -> &[ParamId] {
        &self.last_updated
    }

    /// The model with the best validation epoch's parameters.
    pub fn best_model(&self) -> HyperEnergyModel {
        HyperEnergyModel {
            spec: self.model.spec.clone(),
            arch: self.model.arch.clone(),
            store: self.best.clone(),
        }
    }

    pub fn into_outcome(self) -> TrainOutcome {
        let model = self.best_model();
        TrainOutcome {
            model,
            history: self.history,
        }
    }

    /// One optimizer step on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &WindowedDataset) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(batch.inputs.clone());
        let pred = self.model.forward(&mut g, x)?;
        let target = g.constant(batch.targets.clone());
        let l = loss(&mut g, pred, target, self.config.loss)?;
        let value = g.value(l).item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss {value}")));
        }
        self.model.store.zero_grad();
        g.backward(l, &mut self.model.store)?;
        self.last_updated = self.optimizer.step(&mut self.model.store, self.scheduler.lr)?;
        Ok(value)
    }

    /// Trains one epoch and judges it on the validation set.
    pub fn epoch(&mut self, train: &WindowedDataset, val: &WindowedDataset, scaler: &DatasetScaler) -> Result<EpochVerdict> {
        if self.is_finished() {
            return Err(Error::invalid("training has already stopped"));
        }
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data("training and validation sets must be non-empty".into()));
        }
        let started = Instant::now();
        let epoch = self.completed + 1;
        let lr = self.scheduler.lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("shuffle.{epoch}")));
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch = train.select(idx)?;
            let l = self.step(&batch).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}, batch {}: {msg}", b + 1)),
                other => other,
            })?;
            total += l * idx.len() as f64;
        }
        let scores = validation_scores(&self.model, val, scaler, self.config.loss, self.config.eval_batch_size)?;
        if !scores.loss.is_finite() {
            return Err(Error::Numerical(format!("epoch {epoch}: non-finite validation loss")));
        }
        self.completed = epoch;
        self.history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: scores.loss,
            val_smape: scores.smape,
            val_mae: scores.mae,
            learning_rate: lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        self.scheduler.observe(scores.loss);
        let mut verdict = self.stopper.observe(epoch, scores.loss);
        if verdict == EpochVerdict::Improved {
            self.best = self.model.store.clone();
            self.best.zero_grad();
            self.history.best_epoch = epoch;
            if epoch >= self.config.max_epochs {
                verdict = EpochVerdict::Stop(StopReason::MaxEpochs);
            }
        }
        if let EpochVerdict::Stop(reason) = verdict {
            self.history.stop_reason = Some(reason);
        }
        Ok(verdict)
    }

    /// Runs until stopped or until `epoch_limit` epochs are complete.
    pub fn run_until(
        &mut self,
        train: &WindowedDataset,
        val: &WindowedDataset,
        scaler: &DatasetScaler,
        epoch_limit: usize,
    ) -> Result<()> {
        while !self.is_finished() && self.completed < epoch_limit {
            self.epoch(train, val, scaler)?;
        }
        Ok(())
    }

    pub fn run(&mut self, train: &WindowedDataset, val: &WindowedDataset, scaler: &DatasetScaler) -> Result<()> {
        self.run_until(train, val, scaler, usize::MAX)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: HyperEnergyModel,
    pub history: TrainHistory,
}

pub fn train(
    model: HyperEnergyModel,
    train_set: &WindowedDataset,
    val: &WindowedDataset,
    scaler: &DatasetScaler,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, config, seed)?;
    trainer.run(train_set, val, scaler)?;
    Ok(trainer.into_outcome())
}
