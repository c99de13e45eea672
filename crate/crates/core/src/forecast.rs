//! Posterior queries over a weighted particle ensemble: expectations,
//! structure probabilities, mixture prediction intervals and exceedance
//! probabilities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{self, Factor, ModelState, Observations};
use crate::kernel::BaseKind;
use crate::smc::ParticleCollection;

const CDF_TOLERANCE: f64 = 1e-10;

/// Self-normalized posterior expectation of `f`.
pub fn posterior_expectation<P>(
    pc: &ParticleCollection<P>,
    mut f: impl FnMut(&P) -> f64,
) -> Result<f64> {
    let w = pc.normalized_weights()?;
    Ok(pc.particles.iter().zip(&w).map(|(p, w)| w * f(p)).sum())
}

/// Posterior probability that the kernel contains a base kernel of `kind`.
pub fn structure_probability(pc: &ParticleCollection<ModelState>, kind: BaseKind) -> Result<f64> {
    let p = posterior_expectation(pc, |s| if s.expr.contains(kind) { 1.0 } else { 0.0 })?;
    Ok(p.clamp(0.0, 1.0))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// One particle's Gaussian predictive marginals for new observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A weighted mixture of Gaussian marginals at a set of query times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub components: Vec<Component>,
}

impl Mixture {
    pub fn from_particles(
        pc: &ParticleCollection<ModelState>,
        obs: Observations<'_>,
        query: &[f64],
    ) -> Result<Mixture> {
        let w = pc.normalized_weights()?;
        let components = pc
            .particles
            .par_iter()
            .zip(w.par_iter())
            .filter(|(_, w)| **w > 0.0)
            .map(|(p, w)| {
                let mut state = p.clone();
                let pred = gp::predictive(&mut state, obs, query, false)?;
                Ok(Component {
                    weight: *w,
                    std: pred.observation_var().iter().map(|v| v.sqrt()).collect(),
                    mean: pred.mean,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mixture { components })
    }

    pub fn len(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean[i]).sum()
    }

    pub fn cdf(&self, i: usize, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let s = c.std[i];
                let p = if s > 0.0 {
                    normal_cdf((x - c.mean[i]) / s)
                } else if x >= c.mean[i] {
                    1.0
                } else {
                    0.0
                };
                c.weight * p
            })
            .sum()
    }

    /// Quantile of the marginal mixture at index `i`, by bisection.
    pub fn quantile(&self, i: usize, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {p} outside (0, 1)")));
        }
        let spread = self.components.iter().map(|c| c.std[i]).fold(0.0, f64::max).max(1e-300);
        let mut lo = self.components.iter().map(|c| c.mean[i]).fold(f64::INFINITY, f64::min);
        let mut hi = self.components.iter().map(|c| c.mean[i]).fold(f64::NEG_INFINITY, f64::max);
        lo -= 40.0 * spread;
        hi += 40.0 * spread;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            let f = self.cdf(i, mid);
            if (f - p).abs() < CDF_TOLERANCE || mid == lo || mid == hi {
                return Ok(mid);
            }
            if f < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Point and interval forecasts at a set of query times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Nominal miscoverage; the interval has level `1 - alpha`.
    pub alpha: f64,
    pub mixture: Mixture,
}

impl Forecast {
    /// Applies `y -> offset + scale * y` to every forecast quantity.
    pub fn map_values(&mut self, offset: f64, scale: f64) {
        let f = |v: &mut f64| *v = offset + scale * *v;
        self.mean.iter_mut().for_each(f);
        self.lower.iter_mut().for_each(f);
        self.upper.iter_mut().for_each(f);
        if scale < 0.0 {
            std::mem::swap(&mut self.lower, &mut self.upper);
        }
        for c in &mut self.mixture.components {
            c.mean.iter_mut().for_each(f);
            c.std.iter_mut().for_each(|s| *s *= scale.abs());
        }
    }

    /// Replaces the query times, e.g. with their original units.
    pub fn with_times(mut self, times: Vec<f64>) -> Self {
        self.times = times;
        self
    }
}

/// Equal-tailed `1 - alpha` intervals of the posterior predictive mixture.
pub fn forecast_intervals(
    pc: &ParticleCollection<ModelState>,
    obs: Observations<'_>,
    query: &[f64],
    alpha: f64,
) -> Result<Forecast> {
    if query.is_empty() {
        return Err(Error::InvalidArgument("empty forecast query".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let mixture = Mixture::from_particles(pc, obs, query)?;
    let mut lower = Vec::with_capacity(query.len());
    let mut upper = Vec::with_capacity(query.len());
    for i in 0..query.len() {
        lower.push(mixture.quantile(i, 0.5 * alpha)?);
        upper.push(mixture.quantile(i, 1.0 - 0.5 * alpha)?);
    }
    Ok(Forecast {
        times: query.to_vec(),
        mean: (0..query.len()).map(|i| mixture.mean(i)).collect(),
        lower,
        upper,
        alpha,
        mixture,
    })
}

/// `P(y(t_i) <= u_i)` for each query time under the posterior predictive.
pub fn exceedance_probability(
    pc: &ParticleCollection<ModelState>,
    obs: Observations<'_>,
    query: &[f64],
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    if query.len() != thresholds.len() {
        return Err(Error::InvalidArgument(
            "one threshold per query time is required".into(),
        ));
    }
    let mixture = Mixture::from_particles(pc, obs, query)?;
    Ok(thresholds
        .iter()
        .enumerate()
        .map(|(i, u)| mixture.cdf(i, *u).clamp(0.0, 1.0))
        .collect())
}

/// Monte Carlo estimate of `P(event(y))` for a joint draw `y` of new
/// observations at all query times.
pub fn joint_event_probability<R: Rng + ?Sized>(
    pc: &ParticleCollection<ModelState>,
    obs: Observations<'_>,
    query: &[f64],
    samples: usize,
    mut event: impl FnMut(&[f64]) -> bool,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let w = pc.normalized_weights()?;
    let m = query.len();
    let mut comps: Vec<(f64, DVector<f64>, DMatrix<f64>)> = Vec::new();
    for (p, wi) in pc.particles.iter().zip(&w) {
        if *wi <= 0.0 {
            continue;
        }
        let mut state = p.clone();
        let pred = gp::predictive(&mut state, obs, query, true)?;
        let cov = pred.covariance.expect("full covariance requested")
            + DMatrix::identity(m, m) * pred.noise;
        let factor = Factor::new(&cov).ok_or_else(|| Error::Numerical {
            kernel: p.expr.to_string(),
        })?;
        comps.push((*wi, DVector::from_vec(pred.mean), factor.lower()));
    }
    let mut hits = 0usize;
    let mut y = vec![0.0; m];
    for _ in 0..samples {
        let mut u: f64 = rng.random();
        let mut k = comps.len() - 1;
        for (j, c) in comps.iter().enumerate() {
            if u < c.0 {
                k = j;
                break;
            }
            u -= c.0;
        }
        let (_, mean, lower) = &comps[k];
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        let draw = mean + lower * z;
        y.copy_from_slice(draw.as_slice());
        if event(&y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples as f64)
}
