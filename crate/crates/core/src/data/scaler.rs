//! Min-max scaling fitted on the training split only.

use serde::{Deserialize, Serialize};

use super::features::FeatureTable;
use crate::error::{Error, Result};

/// Per-column `(x - min) / (max - min)`; a constant column maps to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on row-major `rows` with `width` columns.
    pub fn fit(rows: &[f64], width: usize) -> Result<Self> {
        if width == 0 || rows.is_empty() || rows.len() % width != 0 {
            return Err(Error::Data("cannot fit a scaler on an empty training split".into()));
        }
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for row in rows.chunks_exact(width) {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn transform(&self, col: usize, x: f64) -> f64 {
        let span = self.max[col] - self.min[col];
        if span > 0.0 {
            (x - self.min[col]) / span
        } else {
            0.0
        }
    }

    pub fn inverse(&self, col: usize, x: f64) -> f64 {
        let span = self.max[col] - self.min[col];
        x * span + self.min[col]
    }

    pub fn transform_rows(&self, rows: &[f64]) -> Vec<f64> {
        let w = self.width();
        rows.iter().enumerate().map(|(i, &v)| self.transform(i % w, v)).collect()
    }
}

/// Feature scaler plus a separate one-column scaler for consumption targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetScaler {
    pub features: MinMaxScaler,
    pub target: MinMaxScaler,
}

impl DatasetScaler {
    pub fn fit(train: &FeatureTable) -> Result<Self> {
        Ok(DatasetScaler {
            features: MinMaxScaler::fit(&train.values, train.width())?,
            target: MinMaxScaler::fit(&train.consumption, 1)?,
        })
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        self.target.transform(0, y)
    }

    pub fn unscale_target(&self, y: f64) -> f64 {
        self.target.inverse(0, y)
    }
}
