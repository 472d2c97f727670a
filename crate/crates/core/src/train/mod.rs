//! Training engine: losses, optimizers, learning-rate schedule, early
//! stopping, the training loop and grid search.

mod grid;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use grid::{
    grid_search, rank, rank_order, read_results, run_point, GridOptions, GridOutcome, GridPoint, GridRecord,
    GridSpace, RESULTS_HEADER,
};
pub use loss::{loss, LossKind};
pub use optim::{Optimizer, OptimizerKind, BETA1, BETA2, EPSILON};
pub use schedule::{EarlyStopping, EpochVerdict, PlateauConfig, PlateauScheduler, StopReason};
pub use trainer::{
    train, validation_scores, EpochRecord, TrainConfig, TrainHistory, TrainOutcome, TrainState, Trainer,
    ValidationScores,
};
