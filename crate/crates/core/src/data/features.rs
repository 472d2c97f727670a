//! Per-hour feature rows and the chronological train/validation/test split.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Consumption,
    Temperature,
    DayOfYear,
    DayOfMonth,
    /// Monday = 0.
    DayOfWeek,
    HourOfDay,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Consumption,
        Feature::Temperature,
        Feature::DayOfYear,
        Feature::DayOfMonth,
        Feature::DayOfWeek,
        Feature::HourOfDay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Consumption => "consumption",
            Feature::Temperature => "temperature",
            Feature::DayOfYear => "day_of_year",
            Feature::DayOfMonth => "day_of_month",
            Feature::DayOfWeek => "day_of_week",
            Feature::HourOfDay => "hour_of_day",
        }
    }

    /// Calendar value of `ts`; `None` for the measured features.
    pub fn calendar(self, ts: &NaiveDateTime) -> Option<f64> {
        match self {
            Feature::DayOfYear => Some(f64::from(ts.ordinal())),
            Feature::DayOfMonth => Some(f64::from(ts.day())),
            Feature::DayOfWeek => Some(f64::from(ts.weekday().num_days_from_monday())),
            Feature::HourOfDay => Some(f64::from(ts.hour())),
            Feature::Consumption | Feature::Temperature => None,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature `{s}`")))
    }
}

/// Consumption, temperature, hour of day, day of week, day of year.
pub fn default_features() -> Vec<Feature> {
    vec![
        Feature::Consumption,
        Feature::Temperature,
        Feature::HourOfDay,
        Feature::DayOfWeek,
        Feature::DayOfYear,
    ]
}

/// `L × k` feature rows plus the raw consumption used for targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub timestamps: Vec<NaiveDateTime>,
    pub features: Vec<Feature>,
    /// Row-major `L × k`.
    pub values: Vec<f64>,
    pub consumption: Vec<f64>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.width();
        &self.values[i * k..(i + 1) * k]
    }

    /// Rows `[start, end)` as a new table.
    pub fn slice(&self, start: usize, end: usize) -> FeatureTable {
        let k = self.width();
        FeatureTable {
            timestamps: self.timestamps[start..end].to_vec(),
            features: self.features.clone(),
            values: self.values[start * k..end * k].to_vec(),
            consumption: self.consumption[start..end].to_vec(),
        }
    }
}

pub fn extract_calendar_features(ts: &TimeSeries, features: &[Feature]) -> Result<FeatureTable> {
    if ts.is_empty() {
        return Err(Error::Data("empty series".into()));
    }
    if features.is_empty() {
        return Err(Error::Config("feature set is empty".into()));
    }
    for (i, f) in features.iter().enumerate() {
        if features[..i].contains(f) {
            return Err(Error::Config(format!("feature `{f}` listed twice")));
        }
    }
    if features.contains(&Feature::Temperature) && ts.temperature.is_none() {
        return Err(Error::Data(
            "feature set includes temperature but the series has no temperature column".into(),
        ));
    }
    let mut values = Vec::with_capacity(ts.len() * features.len());
    for (i, t) in ts.timestamps.iter().enumerate() {
        for &f in features {
            values.push(match f {
                Feature::Consumption => ts.consumption[i],
                Feature::Temperature => ts.temperature.as_ref().map_or(0.0, |v| v[i]),
                _ => f.calendar(t).unwrap_or_default(),
            });
        }
    }
    Ok(FeatureTable {
        timestamps: ts.timestamps.clone(),
        features: features.to_vec(),
        values,
        consumption: ts.consumption.clone(),
    })
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Config("split ratios must all be positive".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }

    /// Row indices where validation and test begin: `floor(train·L)` and
    /// `floor((train+val)·L)`.
    pub fn boundaries(&self, len: usize) -> (usize, usize) {
        let l = len as f64;
        // the nudge keeps 0.6·L from rounding to just under an integer
        let a = (self.train * l + 1e-9).floor() as usize;
        let b = ((self.train + self.val) * l + 1e-9).floor() as usize;
        (a.min(len), b.min(len))
    }
}

/// Contiguous partitions; each must hold at least `min_rows` rows.
pub fn chronological_split(
    table: &FeatureTable,
    ratios: SplitRatios,
    min_rows: usize,
) -> Result<(FeatureTable, FeatureTable, FeatureTable)> {
    ratios.validate()?;
    let len = table.len();
    let (a, b) = ratios.boundaries(len);
    let sizes = [a, b - a, len - b];
    if sizes.iter().any(|&s| s < min_rows.max(1)) {
        return Err(Error::Data(format!(
            "series of {len} rows is too short: split sizes {sizes:?}, each needs at least {} rows",
            min_rows.max(1)
        )));
    }
    Ok((table.slice(0, a), table.slice(a, b), table.slice(b, len)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeDelta};

    fn at(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn series(len: usize, temp: bool) -> TimeSeries {
        let start = at(2021, 1, 1, 0);
        let ts = (0..len).map(|i| start + TimeDelta::hours(i as i64)).collect();
        let cons = (0..len).map(|i| i as f64).collect();
        let temp = temp.then(|| (0..len).map(|i| -(i as f64)).collect());
        TimeSeries::new(ts, cons, temp).unwrap()
    }

    #[test]
    fn calendar_facts() {
        let t = at(2021, 3, 1, 13);
        assert_eq!(Feature::DayOfWeek.calendar(&t), Some(0.0));
        assert_eq!(Feature::HourOfDay.calendar(&t), Some(13.0));
        assert_eq!(Feature::DayOfMonth.calendar(&t), Some(1.0));
        assert_eq!(Feature::DayOfYear.calendar(&t), Some(60.0));
        assert_eq!(Feature::DayOfYear.calendar(&at(2020, 12, 31, 0)), Some(366.0));
    }

    #[test]
    fn table_layout_and_ranges() {
        let table = extract_calendar_features(&series(50, true), &default_features()).unwrap();
        assert_eq!(table.width(), 5);
        assert_eq!(table.row(3), &[3.0, -3.0, 3.0, 4.0, 1.0]);
        for i in 0..table.len() {
            let r = table.row(i);
            assert!((0.0..=23.0).contains(&r[2]));
            assert!((0.0..=6.0).contains(&r[3]));
            assert!((1.0..=366.0).contains(&r[4]));
        }
    }

    #[test]
    fn dropping_temperature_narrows_table() {
        let set: Vec<Feature> = default_features().into_iter().filter(|&f| f != Feature::Temperature).collect();
        let table = extract_calendar_features(&series(5, false), &set).unwrap();
        assert_eq!(table.width(), 4);
        assert!(!table.features.contains(&Feature::Temperature));
        assert!(extract_calendar_features(&series(5, false), &default_features()).is_err());
    }

    #[test]
    fn split_sizes() {
        let table = extract_calendar_features(&series(1000, true), &default_features()).unwrap();
        let (tr, va, te) = chronological_split(&table, SplitRatios::default(), 48).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (600, 200, 200));
        let mut joined = tr.values.clone();
        joined.extend(&va.values);
        joined.extend(&te.values);
        assert_eq!(joined, table.values);
        assert_eq!(te.timestamps.last(), table.timestamps.last());
    }

    #[test]
    fn short_series_rejected() {
        let table = extract_calendar_features(&series(10, true), &default_features()).unwrap();
        assert!(chronological_split(&table, SplitRatios::default(), 48).is_err());
        let bad = SplitRatios { train: 0.5, val: 0.2, test: 0.2 };
        assert!(chronological_split(&table, bad, 1).is_err());
    }

    #[test]
    fn boundaries_are_floors() {
        let r = SplitRatios::default();
        for len in 1..3000 {
            let (a, b) = r.boundaries(len);
            assert_eq!(a, len * 6 / 10, "len {len}");
            assert_eq!(b, len * 8 / 10, "len {len}");
        }
    }
}
