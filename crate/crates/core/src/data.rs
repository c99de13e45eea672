//! Time-series ingestion, timestamp encoding, normalization and splitting.

use std::path::Path;

use chrono::{DateTime, Months, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::Observations;

/// How the time column is interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFormat {
    /// Numeric if every stamp parses as a number, dates otherwise.
    #[default]
    Auto,
    Numeric,
    /// ISO-8601 dates, optionally with a time of day; UTC unless an offset is given.
    Date,
}

/// Kind of time stamps a series was loaded from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeKind {
    Numeric,
    Date,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// Time stamps as written in the source.
    pub stamps: Vec<String>,
    /// Encoded times: seconds since the UNIX epoch, or the numbers as given.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: TimeKind,
}

/// Seconds since 1970-01-01T00:00:00Z for an ISO-8601 stamp.
pub fn encode_date(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(seconds(&dt.and_utc()));
        }
    }
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|dt| seconds(&dt.with_timezone(&Utc)))
}

fn seconds(dt: &DateTime<Utc>) -> f64 {
    dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9
}

fn data_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

impl TimeSeries {
    /// Builds a series from numeric times, sorting by time.
    pub fn from_numeric(times: Vec<f64>, values: Vec<f64>) -> Result<TimeSeries> {
        let stamps = times.iter().map(|t| t.to_string()).collect();
        Self::assemble(stamps, times, values, TimeKind::Numeric, Path::new("<memory>"), &[])
    }

    fn assemble(
        stamps: Vec<String>,
        times: Vec<f64>,
        values: Vec<f64>,
        kind: TimeKind,
        path: &Path,
        rows: &[usize],
    ) -> Result<TimeSeries> {
        if times.len() != values.len() {
            return Err(Error::InvalidArgument("times and values differ in length".into()));
        }
        let row = |i: usize| rows.get(i).copied().unwrap_or(i + 1);
        for (i, (t, y)) in times.iter().zip(&values).enumerate() {
            if !t.is_finite() {
                return Err(data_err(path, row(i), "non-finite time"));
            }
            if !y.is_finite() {
                return Err(data_err(path, row(i), "non-finite value"));
            }
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|a, b| times[*a].total_cmp(&times[*b]));
        for w in order.windows(2) {
            if times[w[0]] == times[w[1]] {
                return Err(data_err(
                    path,
                    row(w[1]),
                    format!("duplicate time {} (also on row {})", stamps[w[1]], row(w[0])),
                ));
            }
        }
        Ok(TimeSeries {
            stamps: order.iter().map(|i| stamps[*i].clone()).collect(),
            times: order.iter().map(|i| times[*i]).collect(),
            values: order.iter().map(|i| values[*i]).collect(),
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The first `n` points.
    pub fn prefix(&self, n: usize) -> TimeSeries {
        let n = n.min(self.len());
        TimeSeries {
            stamps: self.stamps[..n].to_vec(),
            times: self.times[..n].to_vec(),
            values: self.values[..n].to_vec(),
            kind: self.kind,
        }
    }

    /// SHA-256 over the encoded times and values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        for (t, y) in self.times.iter().zip(&self.values) {
            h.update(t.to_bits().to_le_bytes());
            h.update(y.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Reads a two-column series from a CSV file with a header row.
pub fn load_csv(
    path: impl AsRef<Path>,
    time_column: &str,
    value_column: &str,
    format: TimeFormat,
) -> Result<TimeSeries> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| data_err(path, 0, format!("cannot open: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| data_err(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| data_err(path, 1, format!("missing column `{name}`")))
    };
    let (ti, vi) = (column(time_column)?, column(value_column)?);

    let mut stamps = Vec::new();
    let mut values = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            data_err(path, row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| {
            record
                .get(i)
                .map(str::trim)
                .ok_or_else(|| data_err(path, row, "missing field"))
        };
        let stamp = field(ti)?.to_string();
        let value: f64 = field(vi)?
            .parse()
            .map_err(|_| data_err(path, row, format!("cannot parse value `{}`", field(vi).unwrap_or(""))))?;
        stamps.push(stamp);
        values.push(value);
        rows.push(row);
    }

    let numeric = match format {
        TimeFormat::Numeric => true,
        TimeFormat::Date => false,
        TimeFormat::Auto => stamps.iter().all(|s| s.parse::<f64>().is_ok()),
    };
    let mut times = Vec::with_capacity(stamps.len());
    for (s, row) in stamps.iter().zip(&rows) {
        let t = if numeric {
            s.parse::<f64>().ok()
        } else {
            encode_date(s)
        };
        times.push(t.ok_or_else(|| data_err(path, *row, format!("cannot parse time `{s}`")))?);
    }
    let kind = if numeric { TimeKind::Numeric } else { TimeKind::Date };
    TimeSeries::assemble(stamps, times, values, kind, path, &rows)
}

/// Affine maps from original units to model units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub time_offset: f64,
    pub time_scale: f64,
    pub value_mean: f64,
    pub value_scale: f64,
}

const MIN_VALUE_RANGE: f64 = 1e-12;

impl Normalization {
    /// Series with fewer than two points get unit scales.
    pub fn fit(series: &TimeSeries) -> Result<Normalization> {
        if series.len() < 2 {
            return Ok(Normalization {
                time_offset: series.times.first().copied().unwrap_or(0.0),
                time_scale: 1.0,
                value_mean: series.values.first().copied().unwrap_or(0.0),
                value_scale: 1.0,
            });
        }
        let (t0, t1) = (series.times[0], series.times[series.len() - 1]);
        if t1 <= t0 {
            return Err(Error::InvalidArgument("constant time vector".into()));
        }
        let mean = series.values.iter().sum::<f64>() / series.len() as f64;
        let lo = series.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = series.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        Ok(Normalization {
            time_offset: t0,
            time_scale: t1 - t0,
            value_mean: mean,
            value_scale: if range < MIN_VALUE_RANGE { 1.0 } else { range },
        })
    }

    pub fn time(&self, t: f64) -> f64 {
        (t - self.time_offset) / self.time_scale
    }

    pub fn time_inverse(&self, u: f64) -> f64 {
        self.time_offset + self.time_scale * u
    }

    pub fn value(&self, y: f64) -> f64 {
        (y - self.value_mean) / self.value_scale
    }

    pub fn value_inverse(&self, v: f64) -> f64 {
        self.value_mean + self.value_scale * v
    }

    pub fn times(&self, t: &[f64]) -> Vec<f64> {
        t.iter().map(|t| self.time(*t)).collect()
    }

    pub fn values(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|y| self.value(*y)).collect()
    }
}

/// A series in model units together with the map back to original units.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub record: Normalization,
}

impl NormalizedSeries {
    pub fn observations(&self) -> Observations<'_> {
        Observations::new(&self.times, &self.values)
    }
}

pub fn normalize(series: &TimeSeries) -> Result<NormalizedSeries> {
    let record = Normalization::fit(series)?;
    Ok(NormalizedSeries {
        times: record.times(&series.times),
        values: record.values(&series.values),
        record,
    })
}

/// Maps values in model units back to original units.
pub fn denormalize(values: &[f64], record: &Normalization) -> Vec<f64> {
    values.iter().map(|v| record.value_inverse(*v)).collect()
}

/// Holds out the last `horizon` points.
pub fn split(series: &TimeSeries, horizon: usize) -> Result<(TimeSeries, TimeSeries)> {
    if horizon >= series.len() {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be smaller than the series length {}",
            series.len()
        )));
    }
    let n = series.len() - horizon;
    let tail = TimeSeries {
        stamps: series.stamps[n..].to_vec(),
        times: series.times[n..].to_vec(),
        values: series.values[n..].to_vec(),
        kind: series.kind,
    };
    Ok((series.prefix(n), tail))
}

/// Stamps and encoded times of `horizon` points after the end of `series`.
///
/// Date series step by calendar months from the last stamp; numeric series
/// step by the median spacing.
pub fn future_times(series: &TimeSeries, horizon: usize) -> Result<(Vec<String>, Vec<f64>)> {
    let Some(&last) = series.times.last() else {
        return Err(Error::InvalidArgument("empty series".into()));
    };
    match series.kind {
        TimeKind::Date => {
            let secs = last.floor();
            let nanos = ((last - secs) * 1e9).round() as u32;
            let start = DateTime::<Utc>::from_timestamp(secs as i64, nanos)
                .ok_or_else(|| Error::InvalidArgument(format!("time {last} out of range")))?;
            let date_only = series.stamps.last().is_some_and(|s| s.trim().len() == 10);
            let mut stamps = Vec::with_capacity(horizon);
            let mut times = Vec::with_capacity(horizon);
            for k in 1..=horizon {
                let dt = start
                    .checked_add_months(Months::new(k as u32))
                    .ok_or_else(|| Error::InvalidArgument("date overflow".into()))?;
                stamps.push(if date_only {
                    dt.format("%Y-%m-%d").to_string()
                } else {
                    dt.to_rfc3339_opts(SecondsFormat::AutoSi, true)
                });
                times.push(seconds(&dt));
            }
            Ok((stamps, times))
        }
        TimeKind::Numeric => {
            let mut gaps: Vec<f64> = series.times.windows(2).map(|w| w[1] - w[0]).collect();
            if gaps.is_empty() {
                return Err(Error::InvalidArgument(
                    "cannot infer a time step from a single point".into(),
                ));
            }
            gaps.sort_by(f64::total_cmp);
            let step = gaps[gaps.len() / 2];
            let times: Vec<f64> = (1..=horizon).map(|k| last + k as f64 * step).collect();
            Ok((times.iter().map(|t| t.to_string()).collect(), times))
        }
    }
}
