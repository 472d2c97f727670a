//! Train every (variant, seed) pair on the same data and compare test
//! metrics by median.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, MetricsReport};
use crate::data::PreparedData;
use crate::error::{Error, Result};
use crate::model::{HyperEnergyModel, ModelSpec, Variant};
use crate::train::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one variant and one seed".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub test: MetricsReport,
    pub epochs: usize,
    pub best_epoch: usize,
    pub val_smape: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &mut [f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        };
        Some(Spread {
            median,
            min: values[0],
            max: values[n - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSummary {
    pub variant: Variant,
    pub runs: usize,
    pub failed: usize,
    /// `None` when every run failed.
    pub mae: Option<Spread>,
    pub rmse: Option<Spread>,
    pub smape: Option<Spread>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
    pub summary: Vec<AblationSummary>,
}

impl AblationTable {
    pub fn summary_for(&self, variant: Variant) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    pub fn median_smape(&self, variant: Variant) -> Option<f64> {
        self.summary_for(variant)?.smape.map(|s| s.median)
    }
}

/// Trains and tests one variant under one seed.
pub fn run_variant(
    spec: &ModelSpec,
    config: &TrainConfig,
    data: &PreparedData,
    variant: Variant,
    seed: u64,
) -> Result<RunMetrics> {
    let spec = ModelSpec { variant, ..spec.clone() };
    let model = HyperEnergyModel::build(&spec, seed, Some(&data.train.inputs))?;
    let out = train(model, &data.train, &data.val, &data.scaler, config, seed)?;
    let test = evaluate(&out.model, &data.test, &data.scaler, config.eval_batch_size)?.report;
    Ok(RunMetrics {
        test,
        epochs: out.history.epochs.len(),
        best_epoch: out.history.best_epoch,
        val_smape: out.history.best().map_or(f64::NAN, |b| b.val_smape),
    })
}

/// Runs every variant under every seed. A failed run is kept in `runs`
/// with its error and left out of the medians.
pub fn ablation_run(
    data: &PreparedData,
    spec: &ModelSpec,
    config: &TrainConfig,
    ablation: &AblationConfig,
    jobs: usize,
    on_run: Option<&(dyn Fn(&AblationRun) + Sync)>,
) -> Result<AblationTable> {
    ablation.validate()?;
    config.validate()?;
    let pairs: Vec<(Variant, u64)> = ablation
        .variants
        .iter()
        .flat_map(|&v| ablation.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let one = |&(variant, seed): &(Variant, u64)| {
        let run = AblationRun {
            variant,
            seed,
            outcome: run_variant(spec, config, data, variant, seed).map_err(|e| e.to_string()),
        };
        if let Some(f) = on_run {
            f(&run);
        }
        run
    };
    let runs: Vec<AblationRun> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| pairs.par_iter().map(one).collect())
    } else {
        pairs.iter().map(one).collect()
    };

    let mut variants: Vec<Variant> = Vec::new();
    for &v in &ablation.variants {
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    let summary = variants
        .into_iter()
        .map(|variant| {
            let ok: Vec<&RunMetrics> = runs
                .iter()
                .filter(|r| r.variant == variant)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let total = runs.iter().filter(|r| r.variant == variant).count();
            let pick = |f: fn(&MetricsReport) -> f64| Spread::of(&mut ok.iter().map(|m| f(&m.test)).collect::<Vec<_>>());
            AblationSummary {
                variant,
                runs: total,
                failed: total - ok.len(),
                mae: pick(|m| m.mae),
                rmse: pick(|m| m.rmse),
                smape: pick(|m| m.smape),
            }
        })
        .collect();
    Ok(AblationTable { runs, summary })
}

pub const ABLATION_HEADER: [&str; 12] = [
    "variant",
    "runs",
    "failed",
    "mae_median",
    "mae_min",
    "mae_max",
    "rmse_median",
    "rmse_min",
    "rmse_max",
    "smape_median",
    "smape_min",
    "smape_max",
];

pub const ABLATION_RUNS_HEADER: [&str; 10] = [
    "variant",
    "seed",
    "status",
    "mae",
    "rmse",
    "smape",
    "val_smape",
    "epochs",
    "best_epoch",
    "error",
];

/// Per-variant medians with min/max spread.
pub fn write_ablation_csv<W: Write>(mut out: W, comments: &[String], table: &AblationTable) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ABLATION_HEADER)?;
    let cells = |s: Option<Spread>| match s {
        Some(s) => [s.median.to_string(), s.min.to_string(), s.max.to_string()],
        None => [String::new(), String::new(), String::new()],
    };
    for s in &table.summary {
        let mut row = vec![s.variant.tag().to_string(), s.runs.to_string(), s.failed.to_string()];
        row.extend(cells(s.mae));
        row.extend(cells(s.rmse));
        row.extend(cells(s.smape));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One line per (variant, seed) run.
pub fn write_ablation_runs_csv<W: Write>(mut out: W, comments: &[String], table: &AblationTable) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ABLATION_RUNS_HEADER)?;
    for r in &table.runs {
        let row = match &r.outcome {
            Ok(m) => [
                r.variant.tag().to_string(),
                r.seed.to_string(),
                "ok".into(),
                m.test.mae.to_string(),
                m.test.rmse.to_string(),
                m.test.smape.to_string(),
                m.val_smape.to_string(),
                m.epochs.to_string(),
                m.best_epoch.to_string(),
                String::new(),
            ],
            Err(e) => [
                r.variant.tag().to_string(),
                r.seed.to_string(),
                "failed".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ],
        };
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_median() {
        assert_eq!(Spread::of(&mut []), None);
        let s = Spread::of(&mut [3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.median, s.min, s.max), (2.0, 1.0, 3.0));
        assert_eq!(Spread::of(&mut [4.0, 1.0, 2.0, 3.0]).unwrap().median, 2.5);
    }
}
