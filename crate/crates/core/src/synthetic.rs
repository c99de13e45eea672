//! Synthetic datasets and exact posterior enumeration over finite families.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::gp::{Factor, ModelState, Observations};
use crate::kernel::{cov_matrix, KernelExpr};
use crate::smc::PinnedFamily;

/// A Gaussian process to draw one dataset from.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub expr: KernelExpr,
    pub noise: f64,
    pub times: Vec<f64>,
    pub seed: u64,
}

/// `n` equally spaced points on `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Draws `y ~ N(0, K + eta I)` through the Cholesky factor.
pub fn sample_dataset(spec: &SyntheticSpec) -> Result<TimeSeries> {
    spec.expr.validate()?;
    if spec.times.is_empty() {
        return Err(Error::InvalidArgument("synthetic data needs n >= 1".into()));
    }
    if !(spec.noise > 0.0) {
        return Err(Error::InvalidArgument("noise variance must be positive".into()));
    }
    let n = spec.times.len();
    let cov = cov_matrix(&spec.expr, &spec.times) + DMatrix::identity(n, n) * spec.noise;
    let factor = Factor::new(&cov).ok_or_else(|| Error::Numerical {
        kernel: spec.expr.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let y = factor.lower() * z;
    TimeSeries::from_numeric(spec.times.clone(), y.iter().copied().collect())
}

/// Noise variance giving `var(signal) / eta = snr`.
pub fn noise_for_snr(signal: &[f64], snr: f64) -> f64 {
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n / snr
}

/// Adds Gaussian noise at the requested signal-to-noise ratio.
pub fn with_noise(times: Vec<f64>, signal: &[f64], snr: f64, seed: u64) -> Result<TimeSeries> {
    let sd = noise_for_snr(signal, snr).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = if sd > 0.0 {
        let d = Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        signal.iter().map(|s| s + d.sample(&mut rng)).collect()
    } else {
        signal.to_vec()
    };
    TimeSeries::from_numeric(times, values)
}

/// Linear trend plus a sinusoid with period `n / 8` points.
pub fn linear_plus_periodic(n: usize, snr: f64, seed: u64) -> Result<TimeSeries> {
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let period = n as f64 / 8.0;
    let signal: Vec<f64> = t.iter().map(|t| 0.05 * t + (2.0 * PI * t / period).sin()).collect();
    with_noise(t, &signal, snr, seed)
}

/// A straight line with noise.
pub fn linear_trend(n: usize, snr: f64, seed: u64) -> Result<TimeSeries> {
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let signal: Vec<f64> = t.iter().map(|t| 2.0 + 0.5 * t).collect();
    with_noise(t, &signal, snr, seed)
}

/// A sinusoid with `cycles` periods over the series.
pub fn periodic(n: usize, cycles: f64, snr: f64, seed: u64) -> Result<TimeSeries> {
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let signal: Vec<f64> = t.iter().map(|t| (2.0 * PI * cycles * t / n as f64).sin()).collect();
    with_noise(t, &signal, snr, seed)
}

/// Independent standard normal values.
pub fn white_noise(n: usize, seed: u64) -> Result<TimeSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    TimeSeries::from_numeric((0..n).map(|i| i as f64).collect(), values)
}

/// Posterior probabilities of fully specified hypotheses under a uniform
/// prior (or `prior`, if given).
pub fn enumerate_posterior(
    members: &[(KernelExpr, f64)],
    prior: Option<&[f64]>,
    obs: Observations<'_>,
) -> Result<Vec<f64>> {
    let m = members.len();
    let prior = prior.map_or_else(|| vec![1.0 / m as f64; m], <[f64]>::to_vec);
    let family = PinnedFamily::new(
        members.iter().map(|(e, n)| ModelState::new(e.clone(), *n)).collect(),
        prior,
    )?;
    family.posterior(obs)
}

/// Expected values recorded alongside a fixture dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFixture {
    pub seed: u64,
    pub n: usize,
    pub snr: f64,
    pub members: Vec<String>,
    pub noise: Vec<f64>,
    pub posterior: Vec<f64>,
}
