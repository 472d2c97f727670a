//! Exhaustive grid search over the hyperparameter space.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::optim::OptimizerKind;
use super::trainer::{TrainConfig, Trainer};
use crate::data::PreparedData;
use crate::error::{Error, Result};
use crate::hypernet::Activation;
use crate::model::{HyperEnergyModel, ModelSpec, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpace {
    pub hidden_units: Vec<usize>,
    pub optimizers: Vec<OptimizerKind>,
    pub losses: Vec<LossKind>,
    pub degrees: Vec<u32>,
    pub gammas: Vec<f64>,
    pub activations: Vec<Activation>,
}

impl Default for GridSpace {
    fn default() -> Self {
        GridSpace::table_ii()
    }
}

impl GridSpace {
    /// Hidden size × optimizer × loss × degree × γ × activation:
    /// 3·3·2·4·5·2 = 720 points.
    pub fn table_ii() -> Self {
        GridSpace {
            hidden_units: vec![64, 128, 256],
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Sgd, OptimizerKind::AdamW],
            losses: vec![LossKind::Mae, LossKind::Mse],
            degrees: vec![2, 3, 4, 5],
            gammas: vec![2.0, 5.0, 6.0, 8.0, 10.0],
            activations: vec![Activation::Relu, Activation::Swish],
        }
    }

    /// The space as seen by `variant`: axes it has no use for shrink to
    /// their first value.
    pub fn for_variant(&self, variant: Variant) -> GridSpace {
        let mut s = self.clone();
        let mode = variant.kernel_mode();
        if !mode.is_some_and(|m| m.uses_poly()) {
            s.degrees.truncate(1);
        }
        if !mode.is_some_and(|m| m.uses_rbf()) {
            s.gammas.truncate(1);
        }
        if variant == Variant::PlainLstm {
            s.activations.truncate(1);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("hidden_units", self.hidden_units.is_empty()),
            ("optimizers", self.optimizers.is_empty()),
            ("losses", self.losses.is_empty()),
            ("degrees", self.degrees.is_empty()),
            ("gammas", self.gammas.is_empty()),
            ("activations", self.activations.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("grid.{name} must not be empty")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.hidden_units.len()
            * self.optimizers.len()
            * self.losses.len()
            * self.degrees.len()
            * self.gammas.len()
            * self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, hidden size varying slowest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &hidden_units in &self.hidden_units {
            for &optimizer in &self.optimizers {
                for &loss in &self.losses {
                    for &degree in &self.degrees {
                        for &gamma in &self.gammas {
                            for &activation in &self.activations {
                                out.push(GridPoint {
                                    index: out.len(),
                                    hidden_units,
                                    optimizer,
                                    loss,
                                    degree,
                                    gamma,
                                    activation,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub hidden_units: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub degree: u32,
    pub gamma: f64,
    pub activation: Activation,
}

impl GridPoint {
    pub fn apply(&self, spec: &ModelSpec, config: &TrainConfig) -> (ModelSpec, TrainConfig) {
        let mut spec = spec.clone();
        spec.hidden_units = self.hidden_units;
        if spec.variant == Variant::MlpBaseline {
            spec.mlp_hidden = self.hidden_units;
        }
        spec.degree = self.degree;
        spec.gamma = self.gamma;
        spec.activation = self.activation;
        let mut config = config.clone();
        if config.optimizer != self.optimizer {
            config.learning_rate = None;
        }
        config.optimizer = self.optimizer;
        config.loss = self.loss;
        (spec, config)
    }
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub index: usize,
    pub variant: Variant,
    pub hidden_units: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub degree: u32,
    pub gamma: f64,
    pub activation: Activation,
    pub status: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stop_reason: String,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub val_smape: f64,
    pub val_mae: f64,
    pub seed: u64,
    pub config_hash: String,
    pub error: String,
}

impl GridRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn blank(p: &GridPoint, variant: Variant, seed: u64, config_hash: &str) -> Self {
        GridRecord {
            index: p.index,
            variant,
            hidden_units: p.hidden_units,
            optimizer: p.optimizer,
            loss: p.loss,
            degree: p.degree,
            gamma: p.gamma,
            activation: p.activation,
            status: "failed".into(),
            epochs: 0,
            best_epoch: 0,
            stop_reason: String::new(),
            final_train_loss: f64::NAN,
            best_val_loss: f64::NAN,
            val_smape: f64::NAN,
            val_mae: f64::NAN,
            seed,
            config_hash: config_hash.into(),
            error: String::new(),
        }
    }
}

/// Lower validation SMAPE first, then lower validation MAE, then earlier
/// enumeration; failed runs last.
pub fn rank_order(a: &GridRecord, b: &GridRecord) -> Ordering {
    b.is_ok()
        .cmp(&a.is_ok())
        .then(a.val_smape.total_cmp(&b.val_smape))
        .then(a.val_mae.total_cmp(&b.val_mae))
        .then(a.index.cmp(&b.index))
}

pub fn rank(records: &[GridRecord]) -> Vec<GridRecord> {
    let mut out = records.to_vec();
    out.sort_by(rank_order);
    out
}

#[derive(Clone, Debug, Default)]
pub struct GridOptions {
    pub jobs: usize,
    /// Results CSV; rows are appended as trials finish.
    pub results: Option<PathBuf>,
    /// Skip combinations already present in `results`.
    pub resume: bool,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// Best first.
    pub ranking: Vec<GridRecord>,
    pub best: Option<HyperEnergyModel>,
}

/// Trains one grid point and returns its record with the trained model.
pub fn run_point(
    point: &GridPoint,
    spec: &ModelSpec,
    config: &TrainConfig,
    data: &PreparedData,
    seed: u64,
    config_hash: &str,
) -> (GridRecord, Option<HyperEnergyModel>) {
    let mut rec = GridRecord::blank(point, spec.variant, seed, config_hash);
    let (spec, config) = point.apply(spec, config);
    let outcome = HyperEnergyModel::build(&spec, seed, Some(&data.train.inputs)).and_then(|model| {
        let mut t = Trainer::new(model, &config, seed)?;
        t.run(&data.train, &data.val, &data.scaler)?;
        Ok(t)
    });
    match outcome {
        Ok(t) => {
            let h = t.history();
            let best = h.best().cloned();
            rec.status = "ok".into();
            rec.epochs = h.epochs.len();
            rec.best_epoch = h.best_epoch;
            rec.stop_reason = h.stop_reason.map(|r| r.name().to_string()).unwrap_or_default();
            rec.final_train_loss = h.epochs.last().map_or(f64::NAN, |e| e.train_loss);
            if let Some(b) = best {
                rec.best_val_loss = b.val_loss;
                rec.val_smape = b.val_smape;
                rec.val_mae = b.val_mae;
            }
            (rec, Some(t.best_model()))
        }
        Err(e) => {
            rec.error = e.to_string();
            (rec, None)
        }
    }
}

pub fn read_results(path: &Path) -> Result<Vec<GridRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_header(path: &Path, config_hash: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# config_hash={config_hash}")?;
    writeln!(f, "# tool_version={}", crate::checkpoint::TOOL_VERSION)?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(RESULTS_HEADER)?;
    w.flush()?;
    Ok(())
}

pub const RESULTS_HEADER: [&str; 19] = [
    "index",
    "variant",
    "hidden_units",
    "optimizer",
    "loss",
    "degree",
    "gamma",
    "activation",
    "status",
    "epochs",
    "best_epoch",
    "stop_reason",
    "final_train_loss",
    "best_val_loss",
    "val_smape",
    "val_mae",
    "seed",
    "config_hash",
    "error",
];

fn append(path: &Path, rec: &GridRecord) -> Result<()> {
    let f = OpenOptions::new().append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.serialize(rec)?;
    w.flush()?;
    Ok(())
}

pub fn grid_search(
    space: &GridSpace,
    spec: &ModelSpec,
    config: &TrainConfig,
    data: &PreparedData,
    seed: u64,
    opts: &GridOptions,
) -> Result<GridOutcome> {
    space.validate()?;
    let points = space.for_variant(spec.variant).points();

    let mut done: BTreeMap<usize, GridRecord> = BTreeMap::new();
    if let Some(path) = &opts.results {
        if opts.resume && path.exists() {
            for rec in read_results(path)? {
                if rec.config_hash != opts.config_hash {
                    return Err(Error::Config(format!(
                        "{} was written for config {}, not {}",
                        path.display(),
                        rec.config_hash,
                        opts.config_hash
                    )));
                }
                done.insert(rec.index, rec);
            }
        } else {
            write_header(path, &opts.config_hash)?;
        }
    }
    let todo: Vec<&GridPoint> = points.iter().filter(|p| !done.contains_key(&p.index)).collect();

    let sink = Mutex::new(());
    let leader: Mutex<Option<(GridRecord, HyperEnergyModel)>> = Mutex::new(None);
    let run = |p: &&GridPoint| -> Result<GridRecord> {
        let (rec, model) = run_point(p, spec, config, data, seed, &opts.config_hash);
        if let Some(path) = &opts.results {
            let _guard = sink.lock().unwrap_or_else(|e| e.into_inner());
            append(path, &rec)?;
        }
        if let (true, Some(model)) = (rec.is_ok(), model) {
            let mut best = leader.lock().unwrap_or_else(|e| e.into_inner());
            if best.as_ref().is_none_or(|(b, _)| rank_order(&rec, b) == Ordering::Less) {
                *best = Some((rec.clone(), model));
            }
        }
        Ok(rec)
    };
    let fresh: Vec<GridRecord> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| todo.par_iter().map(run).collect::<Result<_>>())?
    } else {
        todo.iter().map(run).collect::<Result<_>>()?
    };
    for rec in fresh {
        done.insert(rec.index, rec);
    }
    let records: Vec<GridRecord> = done.into_values().collect();
    let ranking = rank(&records);

    let mut best = None;
    if let Some(top) = ranking.first().filter(|r| r.is_ok()) {
        let held = leader.into_inner().unwrap_or_else(|e| e.into_inner());
        best = match held {
            Some((rec, model)) if rec.index == top.index => Some(model),
            // the winner was trained in an earlier session; training is
            // deterministic, so retraining reproduces it
            _ => {
                let point = points
                    .iter()
                    .find(|p| p.index == top.index)
                    .ok_or_else(|| Error::invalid("results table does not match the grid"))?;
                run_point(point, spec, config, data, seed, &opts.config_hash).1
            }
        };
    }
    Ok(GridOutcome { ranking, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_ii_has_720_points() {
        let s = GridSpace::table_ii();
        assert_eq!(s.len(), 720);
        let pts = s.points();
        assert_eq!(pts.len(), 720);
        assert!(pts.iter().enumerate().all(|(i, p)| p.index == i));
        assert_eq!(s.for_variant(Variant::HyperenergyFull).len(), 720);
        assert_eq!(s.for_variant(Variant::HyperenergyLearnableRbf).len(), 180);
        assert_eq!(s.for_variant(Variant::HyperenergyNoKernel).len(), 36);
        assert_eq!(s.for_variant(Variant::PlainLstm).len(), 18);
    }

    fn rec(index: usize, smape: f64, mae: f64, ok: bool) -> GridRecord {
        let p = GridSpace::table_ii().points()[index];
        let mut r = GridRecord::blank(&p, Variant::HyperenergyFull, 0, "");
        r.status = if ok { "ok".into() } else { "failed".into() };
        r.val_smape = smape;
        r.val_mae = mae;
        r
    }

    #[test]
    fn ranking_tie_breaks() {
        let records = vec![
            rec(0, 5.0, 2.0, true),
            rec(1, 4.0, 9.0, true),
            rec(2, 5.0, 1.0, true),
            rec(3, f64::NAN, f64::NAN, false),
            rec(4, 5.0, 1.0, true),
        ];
        let order: Vec<usize> = rank(&records).iter().map(|r| r.index).collect();
        assert_eq!(order, vec![1, 2, 4, 0, 3]);
        let mut reversed = records.clone();
        reversed.reverse();
        let again: Vec<usize> = rank(&reversed).iter().map(|r| r.index).collect();
        assert_eq!(again, order);
    }
}
