//! Sliding windows: `n` hours of scaled features in, the next `h` hours of
//! consumption out.

use std::fmt;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::features::FeatureTable;
use super::scaler::DatasetScaler;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    /// Scaled features `[M × n × k]`.
    pub inputs: Tensor,
    /// Scaled consumption `[M × h]`.
    pub targets: Tensor,
    /// Unscaled consumption, row-major `M × h`.
    pub raw_targets: Vec<f64>,
    /// Timestamp of each sample's first target hour.
    pub target_start: Vec<NaiveDateTime>,
    /// Timestamp of each sample's last input hour.
    pub input_end: Vec<NaiveDateTime>,
    pub split: Split,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<WindowedDataset> {
        let (n, k, h) = (self.window(), self.features(), self.horizon());
        let mut x = Vec::with_capacity(indices.len() * n * k);
        let mut y = Vec::with_capacity(indices.len() * h);
        let mut raw = Vec::with_capacity(indices.len() * h);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::OutOfRange(format!("sample {i} of {}", self.len())));
            }
            x.extend_from_slice(&self.inputs.data()[i * n * k..(i + 1) * n * k]);
            y.extend_from_slice(&self.targets.data()[i * h..(i + 1) * h]);
            raw.extend_from_slice(&self.raw_targets[i * h..(i + 1) * h]);
        }
        Ok(WindowedDataset {
            inputs: Tensor::new(&[indices.len(), n, k], x)?,
            targets: Tensor::new(&[indices.len(), h], y)?,
            raw_targets: raw,
            target_start: indices.iter().map(|&i| self.target_start[i]).collect(),
            input_end: indices.iter().map(|&i| self.input_end[i]).collect(),
            split: self.split,
        })
    }
}

/// `M = floor((L - n - h) / stride) + 1`.
pub fn window_count(len: usize, window: usize, horizon: usize, stride: usize) -> usize {
    if stride == 0 || len < window + horizon {
        0
    } else {
        (len - window - horizon) / stride + 1
    }
}

pub fn make_windows(
    table: &FeatureTable,
    scaler: &DatasetScaler,
    window: usize,
    horizon: usize,
    stride: usize,
    split: Split,
) -> Result<WindowedDataset> {
    if window == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config("window, horizon and stride must be >= 1".into()));
    }
    if scaler.features.width() != table.width() {
        return Err(Error::shape("scaler width", &[scaler.features.width()], &[table.width()]));
    }
    let len = table.len();
    let m = window_count(len, window, horizon, stride);
    if m == 0 {
        return Err(Error::Data(format!(
            "{split} split has {len} rows, fewer than window + horizon = {}",
            window + horizon
        )));
    }
    let k = table.width();
    let scaled = scaler.features.transform_rows(&table.values);
    let mut x = Vec::with_capacity(m * window * k);
    let mut y = Vec::with_capacity(m * horizon);
    let mut raw = Vec::with_capacity(m * horizon);
    let mut target_start = Vec::with_capacity(m);
    let mut input_end = Vec::with_capacity(m);
    for i in 0..m {
        let s = i * stride;
        x.extend_from_slice(&scaled[s * k..(s + window) * k]);
        let t = &table.consumption[s + window..s + window + horizon];
        raw.extend_from_slice(t);
        y.extend(t.iter().map(|&v| scaler.scale_target(v)));
        target_start.push(table.timestamps[s + window]);
        input_end.push(table.timestamps[s + window - 1]);
    }
    Ok(WindowedDataset {
        inputs: Tensor::new(&[m, window, k], x)?,
        targets: Tensor::new(&[m, horizon], y)?,
        raw_targets: raw,
        target_start,
        input_end,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::features::{extract_calendar_features, Feature};
    use crate::data::series::TimeSeries;
    use chrono::{NaiveDate, TimeDelta};

    fn table(len: usize) -> FeatureTable {
        let start = NaiveDate::from_ymd_opt(2022, 5, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts = TimeSeries::new(
            (0..len).map(|i| start + TimeDelta::hours(i as i64)).collect(),
            (0..len).map(|i| i as f64).collect(),
            None,
        )
        .unwrap();
        extract_calendar_features(&ts, &[Feature::Consumption, Feature::HourOfDay]).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(window_count(100, 24, 24, 1), 53);
        assert_eq!(window_count(48, 24, 24, 1), 1);
        assert_eq!(window_count(47, 24, 24, 1), 0);
        assert_eq!(window_count(100, 24, 24, 5), 11);
    }

    #[test]
    fn targets_follow_inputs() {
        let t = table(100);
        let scaler = DatasetScaler::fit(&t).unwrap();
        let ds = make_windows(&t, &scaler, 24, 24, 1, Split::Train).unwrap();
        assert_eq!(ds.len(), 53);
        assert_eq!(ds.inputs.shape(), &[53, 24, 2]);
        let first: Vec<f64> = (24..48).map(|v| v as f64).collect();
        assert_eq!(&ds.raw_targets[..24], first.as_slice());
        for i in 0..ds.len() {
            assert_eq!(ds.input_end[i] + TimeDelta::hours(1), ds.target_start[i]);
        }
        let too_short = table(47);
        assert!(make_windows(&too_short, &scaler, 24, 24, 1, Split::Train).is_err());
    }

    #[test]
    fn select_reorders() {
        let t = table(60);
        let scaler = DatasetScaler::fit(&t).unwrap();
        let ds = make_windows(&t, &scaler, 4, 2, 3, Split::Val).unwrap();
        let sub = ds.select(&[2, 0]).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.raw_targets, vec![10.0, 11.0, 4.0, 5.0]);
        assert!(ds.select(&[ds.len()]).is_err());
    }
}
