//! Point and interval forecast accuracy metrics.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seasonal period for monthly data.
pub const MONTHLY_PERIOD: usize = 12;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!(
            "horizon lengths differ: {a} vs {b}"
        )));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("empty horizon".into()));
    }
    Ok(())
}

fn smape_term(x: f64, xh: f64) -> f64 {
    let d = x.abs() + xh.abs();
    if d == 0.0 {
        debug!("smape term with |x| + |x_hat| = 0 contributes 0");
        0.0
    } else {
        2.0 * (x - xh).abs() / d
    }
}

/// Symmetric mean absolute percentage error, in percent.
pub fn smape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual.len(), predicted.len())?;
    let s: f64 = actual.iter().zip(predicted).map(|(x, p)| smape_term(*x, *p)).sum();
    Ok(100.0 * s / actual.len() as f64)
}

/// Mean absolute in-sample seasonal-naive error.
pub fn seasonal_naive_scale(insample: &[f64], m: usize) -> Result<f64> {
    if m == 0 || insample.len() <= m {
        return Err(Error::UndefinedMetric(format!(
            "in-sample length {} must exceed the seasonal period {m}",
            insample.len()
        )));
    }
    let s: f64 = insample.windows(m + 1).map(|w| (w[m] - w[0]).abs()).sum();
    let scale = s / (insample.len() - m) as f64;
    if scale == 0.0 {
        return Err(Error::UndefinedMetric(
            "seasonal-naive in-sample error is zero".into(),
        ));
    }
    Ok(scale)
}

/// Mean absolute scaled error.
pub fn mase(actual: &[f64], predicted: &[f64], insample: &[f64], m: usize) -> Result<f64> {
    check_lengths(actual.len(), predicted.len())?;
    let scale = seasonal_naive_scale(insample, m)?;
    let s: f64 = actual.iter().zip(predicted).map(|(x, p)| (x - p).abs()).sum();
    Ok(s / actual.len() as f64 / scale)
}

fn interval_score(x: f64, upper: f64, lower: f64, alpha: f64) -> f64 {
    let mut s = upper - lower;
    if x < lower {
        s += 2.0 / alpha * (lower - x);
    }
    if x > upper {
        s += 2.0 / alpha * (x - upper);
    }
    s
}

/// Mean scaled interval score of `1 - alpha` intervals.
pub fn msis(
    actual: &[f64],
    upper: &[f64],
    lower: &[f64],
    insample: &[f64],
    m: usize,
    alpha: f64,
) -> Result<f64> {
    check_lengths(actual.len(), upper.len())?;
    check_lengths(actual.len(), lower.len())?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let scale = seasonal_naive_scale(insample, m)?;
    let s: f64 = (0..actual.len())
        .map(|i| interval_score(actual[i], upper[i], lower[i], alpha))
        .sum();
    Ok(s / actual.len() as f64 / scale)
}

/// All three metrics over the horizon, plus per-step values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub smape: f64,
    pub mase: f64,
    pub msis: f64,
    pub smape_by_horizon: Vec<f64>,
    pub mase_by_horizon: Vec<f64>,
    pub msis_by_horizon: Vec<f64>,
}

pub fn evaluate(
    actual: &[f64],
    mean: &[f64],
    lower: &[f64],
    upper: &[f64],
    insample: &[f64],
    m: usize,
    alpha: f64,
) -> Result<MetricReport> {
    let scale = seasonal_naive_scale(insample, m)?;
    let h = actual.len();
    Ok(MetricReport {
        smape: smape(actual, mean)?,
        mase: mase(actual, mean, insample, m)?,
        msis: msis(actual, upper, lower, insample, m, alpha)?,
        smape_by_horizon: (0..h).map(|i| 100.0 * smape_term(actual[i], mean[i])).collect(),
        mase_by_horizon: (0..h).map(|i| (actual[i] - mean[i]).abs() / scale).collect(),
        msis_by_horizon: (0..h)
            .map(|i| interval_score(actual[i], upper[i], lower[i], alpha) / scale)
            .collect(),
    })
}
