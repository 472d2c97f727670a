//! Hourly consumption series and CSV ingestion.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub timestamps: Vec<NaiveDateTime>,
    /// kWh per hour.
    pub consumption: Vec<f64>,
    /// °C per hour, when the source has it.
    pub temperature: Option<Vec<f64>>,
}

impl TimeSeries {
    /// Checks lengths, strictly hourly spacing and non-negative consumption.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        consumption: Vec<f64>,
        temperature: Option<Vec<f64>>,
    ) -> Result<Self> {
        if timestamps.len() != consumption.len()
            || temperature.as_ref().is_some_and(|t| t.len() != timestamps.len())
        {
            return Err(Error::Data("series columns have different lengths".into()));
        }
        for pair in timestamps.windows(2) {
            if pair[1] - pair[0] != TimeDelta::hours(1) {
                return Err(Error::Data(format!(
                    "non-hourly spacing between {} and {}",
                    pair[0], pair[1]
                )));
            }
        }
        check_values(&timestamps, &consumption, temperature.as_deref())?;
        Ok(TimeSeries {
            timestamps,
            consumption,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Writes `timestamp,consumption[,temperature]`, preceded by `#` comment
    /// lines taken from `comments`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        match &self.temperature {
            Some(_) => w.write_record(["timestamp", "consumption", "temperature"])?,
            None => w.write_record(["timestamp", "consumption"])?,
        }
        for i in 0..self.len() {
            let ts = self.timestamps[i].format(TIMESTAMP_FORMAT).to_string();
            let cons = self.consumption[i].to_string();
            match &self.temperature {
                Some(t) => w.write_record([ts, cons, t[i].to_string()])?,
                None => w.write_record([ts, cons])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_values(timestamps: &[NaiveDateTime], consumption: &[f64], temperature: Option<&[f64]>) -> Result<()> {
    for (ts, &v) in timestamps.iter().zip(consumption) {
        if !v.is_finite() {
            return Err(Error::Data(format!("non-finite consumption at {ts}")));
        }
        if v < 0.0 {
            return Err(Error::Data(format!("negative consumption {v} at {ts}")));
        }
    }
    if let Some(temp) = temperature {
        if let Some((ts, _)) = timestamps.iter().zip(temp).find(|(_, t)| !t.is_finite()) {
            return Err(Error::Data(format!("non-finite temperature at {ts}")));
        }
    }
    Ok(())
}

/// Which CSV columns hold the series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub timestamp: String,
    pub consumption: String,
    /// Read when present in the header; `None` skips temperature entirely.
    pub temperature: Option<String>,
    /// chrono format string; ISO-8601 when unset.
    pub timestamp_format: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: "timestamp".into(),
            consumption: "consumption".into(),
            temperature: Some("temperature".into()),
            timestamp_format: None,
        }
    }
}

/// What to do about missing hourly rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum GapPolicy {
    #[default]
    Reject,
    /// Repeat the last row for gaps of at most `max_hours` missing rows.
    ForwardFill { max_hours: u32 },
}

pub fn parse_timestamp(s: &str, format: Option<&str>) -> Result<NaiveDateTime> {
    let s = s.trim();
    let parsed = match format {
        Some(f) => NaiveDateTime::parse_from_str(s, f).ok(),
        None => NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M"))
            .ok()
            .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc())),
    };
    parsed.ok_or_else(|| Error::Data(format!("unparseable timestamp `{s}`")))
}

pub fn ingest_csv(path: &Path, columns: &ColumnMap, gaps: GapPolicy) -> Result<TimeSeries> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, columns, gaps)
}

/// Parses a series from CSV text. Lines starting with `#` are ignored.
pub fn read_csv<R: Read>(reader: R, columns: &ColumnMap, gaps: GapPolicy) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let find = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    };
    let ts_col = find(&columns.timestamp)?;
    let cons_col = find(&columns.consumption)?;
    let temp_col = columns.temperature.as_deref().and_then(|t| index.get(t).copied());

    let mut rows: Vec<(NaiveDateTime, f64, Option<f64>)> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let number = |i: usize, what: &str| -> Result<f64> {
            field(i).parse::<f64>().map_err(|_| {
                Error::Data(format!("row {}: bad {what} value `{}`", line + 1, field(i)))
            })
        };
        let ts = parse_timestamp(field(ts_col), columns.timestamp_format.as_deref())?;
        let cons = number(cons_col, "consumption")?;
        let temp = temp_col.map(|c| number(c, "temperature")).transpose()?;
        rows.push((ts, cons, temp));
    }
    if rows.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(pair) = rows.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(Error::Data(format!("duplicate timestamp {}", pair[0].0)));
    }

    let mut timestamps = Vec::with_capacity(rows.len());
    let mut consumption = Vec::with_capacity(rows.len());
    let mut temperature = temp_col.map(|_| Vec::with_capacity(rows.len()));
    for (i, &(ts, cons, temp)) in rows.iter().enumerate() {
        if i > 0 {
            let prev = rows[i - 1].0;
            let step = ts - prev;
            if step.num_seconds() % 3600 != 0 {
                return Err(Error::Data(format!("non-hourly spacing between {prev} and {ts}")));
            }
            let missing = step.num_hours() - 1;
            if missing > 0 {
                match gaps {
                    GapPolicy::ForwardFill { max_hours } if missing <= i64::from(max_hours) => {
                        let (last_c, last_t) = (rows[i - 1].1, rows[i - 1].2);
                        for k in 1..=missing {
                            timestamps.push(prev + TimeDelta::hours(k));
                            consumption.push(last_c);
                            if let (Some(t), Some(v)) = (temperature.as_mut(), last_t) {
                                t.push(v);
                            }
                        }
                    }
                    _ => {
                        return Err(Error::Data(format!(
                            "gap of {missing} missing hour(s) between {prev} and {ts}"
                        )))
                    }
                }
            }
        }
        timestamps.push(ts);
        consumption.push(cons);
        if let (Some(t), Some(v)) = (temperature.as_mut(), temp) {
            t.push(v);
        }
    }
    TimeSeries::new(timestamps, consumption, temperature)
}
