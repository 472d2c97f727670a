//! Evaluation on denormalized predictions, and the ablation harness.

mod ablation;
mod metrics;

pub use ablation::{
    ablation_run, run_variant, write_ablation_csv, write_ablation_runs_csv, AblationConfig, AblationRun, AblationSummary,
    AblationTable, RunMetrics, Spread, ABLATION_HEADER, ABLATION_RUNS_HEADER,
};
pub use metrics::{mae, rmse, smape, MetricsReport};

use std::io::Write;

use chrono::{NaiveDateTime, TimeDelta};

use crate::data::{DatasetScaler, WindowedDataset, TIMESTAMP_FORMAT};
use crate::error::Result;
use crate::model::{HyperEnergyModel, Variant};

/// One forecast value next to the value it predicts.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub sample: usize,
    pub step: usize,
    pub timestamp: NaiveDateTime,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<PredictionRow>,
}

/// Predicts every window, maps predictions back to kWh through the
/// training target scaler, and pools all horizon steps into one comparison.
pub fn evaluate(
    model: &HyperEnergyModel,
    data: &WindowedDataset,
    scaler: &DatasetScaler,
    batch_size: usize,
) -> Result<Evaluation> {
    let scaled = model.predict(&data.inputs, batch_size)?;
    let predicted: Vec<f64> = scaled.data().iter().map(|&v| scaler.unscale_target(v)).collect();
    let report = MetricsReport::compute(&data.raw_targets, &predicted, data.split, model.spec.variant)?;
    let h = data.horizon();
    let predictions = predicted
        .iter()
        .zip(&data.raw_targets)
        .enumerate()
        .map(|(i, (&p, &a))| PredictionRow {
            sample: i / h,
            step: i % h,
            timestamp: data.target_start[i / h] + TimeDelta::hours((i % h) as i64),
            actual: a,
            predicted: p,
        })
        .collect();
    Ok(Evaluation { report, predictions })
}

pub const PREDICTIONS_HEADER: [&str; 6] = ["sample", "step", "timestamp", "actual", "predicted", "variant"];
pub const METRICS_HEADER: [&str; 6] = ["variant", "split", "count", "mae", "rmse", "smape"];

/// Long-format predictions: `sample,step,timestamp,actual,predicted,variant`.
pub fn write_predictions_csv<W: Write>(mut out: W, comments: &[String], rows: &[PredictionRow], variant: Variant) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTIONS_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample.to_string(),
            r.step.to_string(),
            r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            r.actual.to_string(),
            r.predicted.to_string(),
            variant.tag().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `variant,split,count,mae,rmse,smape`, one row per report.
pub fn write_metrics_csv<W: Write>(mut out: W, comments: &[String], reports: &[MetricsReport]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in reports {
        w.write_record([
            r.variant.tag().to_string(),
            r.split.to_string(),
            r.count.to_string(),
            r.mae.to_string(),
            r.rmse.to_string(),
            r.smape.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
