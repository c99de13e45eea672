//! Dense Gaussian-process numerics with the latent function marginalized out:
//! `y ~ Normal(0, K + eta I)`.
//!
//! Every factorization adds a jitter of `1e-8 * mean(diag)` and, on failure,
//! retries with ten times the jitter up to three more times.

use std::cell::Cell;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{cov_matrix, cross_cov_matrix, kernel_weighted_gradient, KernelExpr};
use crate::prior::{self, PcfgConfig};

const JITTER_SCALE: f64 = 1e-8;
const JITTER_RETRIES: usize = 3;

thread_local! {
    static CHOLESKY_FLOPS: Cell<u64> = const { Cell::new(0) };
}

/// Cholesky flop counter for the calling thread (n^3 / 3 per factorization).
pub fn cholesky_flops() -> u64 {
    CHOLESKY_FLOPS.with(Cell::get)
}

fn record_flops(n: usize) {
    let n = n as u64;
    CHOLESKY_FLOPS.with(|c| c.set(c.get() + n * n * n / 3));
}

/// Borrowed view of paired time points and values.
#[derive(Clone, Copy, Debug)]
pub struct Observations<'a> {
    pub times: &'a [f64],
    pub values: &'a [f64],
}

impl<'a> Observations<'a> {
    pub fn new(times: &'a [f64], values: &'a [f64]) -> Self {
        assert_eq!(times.len(), values.len(), "times and values differ in length");
        Observations { times, values }
    }

    pub fn empty() -> Self {
        Observations {
            times: &[],
            values: &[],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// First `n` observations.
    pub fn prefix(&self, n: usize) -> Self {
        Observations {
            times: &self.times[..n],
            values: &self.values[..n],
        }
    }
}

/// Cholesky factor of a jittered covariance.
#[derive(Clone, Debug)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factorizes `a + jitter I` following the escalation policy.
    pub fn new(a: &DMatrix<f64>) -> Option<Factor> {
        let n = a.nrows();
        let mean_diag = if n == 0 { 0.0 } else { a.diagonal().mean().abs() };
        let mut jitter = JITTER_SCALE * if mean_diag > 0.0 { mean_diag } else { 1.0 };
        for _ in 0..=JITTER_RETRIES {
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            record_flops(n);
            if let Some(chol) = m.cholesky() {
                if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                    return Some(Factor { chol, jitter });
                }
            }
            jitter *= 10.0;
        }
        None
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solves `L x = b` for the lower factor `L`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

fn numerical(expr: &KernelExpr) -> Error {
    Error::Numerical {
        kernel: expr.to_string(),
    }
}

/// Gaussian log-density via a triangular factorization of the jittered covariance.
pub fn mvn_logpdf(y: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let n = y.len();
    if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: y {n}, mean {}, cov {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let factor = Factor::new(cov).ok_or_else(|| Error::Numerical {
        kernel: "<explicit covariance>".into(),
    })?;
    let r = DVector::from_iterator(n, y.iter().zip(mean).map(|(a, b)| a - b));
    Ok(gaussian_logpdf_factored(&factor, &r))
}

fn gaussian_logpdf_factored(factor: &Factor, r: &DVector<f64>) -> f64 {
    let alpha = factor.solve(r);
    let n = r.len() as f64;
    -0.5 * r.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * n * (2.0 * PI).ln()
}

/// Factorization and likelihood of `(expr, noise)` on a fixed data set.
#[derive(Clone, Debug)]
pub struct Fit {
    n: usize,
    factor: Option<Factor>,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

impl Fit {
    pub fn new(expr: &KernelExpr, noise: f64, obs: Observations<'_>) -> Result<Fit> {
        let n = obs.len();
        if n == 0 {
            return Ok(Fit {
                n,
                factor: None,
                alpha: DVector::zeros(0),
                log_likelihood: 0.0,
            });
        }
        let mut k = cov_matrix(expr, obs.times);
        for i in 0..n {
            k[(i, i)] += noise;
        }
        let factor = Factor::new(&k).ok_or_else(|| numerical(expr))?;
        let y = DVector::from_column_slice(obs.values);
        let alpha = factor.solve(&y);
        let log_likelihood =
            -0.5 * y.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();
        if !log_likelihood.is_finite() {
            return Err(numerical(expr));
        }
        Ok(Fit {
            n,
            factor: Some(factor),
            alpha,
            log_likelihood,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// `(K + eta I)^{-1} y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn factor(&self) -> Option<&Factor> {
        self.factor.as_ref()
    }
}

/// One hypothesis `(k, theta, eta)` with a cached factorization.
///
/// The cache is keyed by the number of observations; callers pass growing
/// prefixes of the same data set.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub expr: KernelExpr,
    pub noise: f64,
    fit: Option<Fit>,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.expr == other.expr && self.noise == other.noise
    }
}

impl ModelState {
    pub fn new(expr: KernelExpr, noise: f64) -> Self {
        ModelState {
            expr,
            noise,
            fit: None,
        }
    }

    /// Draw `(k, theta, eta)` from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(cfg: &PcfgConfig, rng: &mut R) -> Self {
        let expr = prior::sample_structure(cfg, rng);
        let noise = prior::sample_noise(rng);
        ModelState::new(expr, noise)
    }

    pub fn with_fit(expr: KernelExpr, noise: f64, fit: Fit) -> Self {
        ModelState {
            expr,
            noise,
            fit: Some(fit),
        }
    }

    pub fn invalidate(&mut self) {
        self.fit = None;
    }

    pub fn cached_len(&self) -> Option<usize> {
        self.fit.as_ref().map(Fit::len)
    }

    /// Fit for `obs`, recomputed when the cache does not match its length.
    pub fn fit(&mut self, obs: Observations<'_>) -> Result<&Fit> {
        if self.fit.as_ref().map(Fit::len) != Some(obs.len()) {
            self.fit = Some(Fit::new(&self.expr, self.noise, obs)?);
        }
        Ok(self.fit.as_ref().expect("fit was just populated"))
    }

    pub fn log_likelihood(&mut self, obs: Observations<'_>) -> Result<f64> {
        Ok(self.fit(obs)?.log_likelihood())
    }

    pub fn log_prior(&self, cfg: &PcfgConfig) -> Result<f64> {
        Ok(prior::log_prior(&self.expr, cfg) + prior::log_noise_prior(self.noise)?)
    }

    /// `log P(k, theta, eta, y)`.
    pub fn log_joint(&mut self, obs: Observations<'_>, cfg: &PcfgConfig) -> Result<f64> {
        let lp = self.log_prior(cfg)?;
        Ok(lp + self.log_likelihood(obs)?)
    }
}

/// `log P(k, theta, eta, y)` without touching any cache.
pub fn log_joint(state: &ModelState, obs: Observations<'_>, cfg: &PcfgConfig) -> Result<f64> {
    let fit = Fit::new(&state.expr, state.noise, obs)?;
    Ok(state.log_prior(cfg)? + fit.log_likelihood())
}

/// Posterior predictive of the latent function at query times.
#[derive(Clone, Debug)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    /// Marginal variances of f(t*).
    pub latent_var: Vec<f64>,
    pub noise: f64,
    pub covariance: Option<DMatrix<f64>>,
}

impl PredictiveSummary {
    /// Marginal variances of a new observation y(t*) = f(t*) + noise.
    pub fn observation_var(&self) -> Vec<f64> {
        self.latent_var.iter().map(|v| v + self.noise).collect()
    }
}

/// Conditions the GP on `obs` and evaluates it at `query`.
pub fn predictive(
    state: &mut ModelState,
    obs: Observations<'_>,
    query: &[f64],
    full_covariance: bool,
) -> Result<PredictiveSummary> {
    let prior_cov = cov_matrix(&state.expr, query);
    let noise = state.noise;
    let expr = state.expr.clone();
    let fit = state.fit(obs)?;
    let (mean, cov) = match fit.factor() {
        None => (vec![0.0; query.len()], prior_cov),
        Some(factor) => {
            let ks = cross_cov_matrix(&expr, obs.times, query);
            let mean = ks.tr_mul(fit.alpha());
            let v = factor.solve_lower(&ks);
            let cov = prior_cov - v.tr_mul(&v);
            (mean.iter().copied().collect(), cov)
        }
    };
    let latent_var = cov.diagonal().iter().map(|v| v.max(0.0)).collect();
    Ok(PredictiveSummary {
        mean,
        latent_var,
        noise,
        covariance: full_covariance.then_some(cov),
    })
}

/// Posterior mean of f at the training times: `K (K + eta I)^{-1} y`.
pub fn conditional_mean(state: &mut ModelState, obs: Observations<'_>) -> Result<Vec<f64>> {
    let expr = state.expr.clone();
    let fit = state.fit(obs)?;
    Ok(conditional_mean_from(&expr, obs, fit))
}

pub(crate) fn conditional_mean_from(expr: &KernelExpr, obs: Observations<'_>, fit: &Fit) -> Vec<f64> {
    if obs.is_empty() {
        return Vec::new();
    }
    let k = cov_matrix(expr, obs.times);
    (k * fit.alpha()).iter().copied().collect()
}

/// Parameters `(shape, scale)` of the conditional noise posterior given `f(t) = mu`.
pub fn gibbs_noise_params(y: &[f64], mu: &[f64]) -> (f64, f64) {
    let ss: f64 = y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    (1.0 + y.len() as f64 / 2.0, 1.0 + ss / 2.0)
}

/// A draw from the conditional noise posterior and its log-density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseDraw {
    pub noise: f64,
    pub log_density: f64,
    pub shape: f64,
    pub scale: f64,
}

/// Draws eta' ~ InverseGamma(1 + n/2, 1 + sum (y - mu)^2 / 2).
pub fn gibbs_noise<R: Rng + ?Sized>(y: &[f64], mu: &[f64], rng: &mut R) -> NoiseDraw {
    let (shape, scale) = gibbs_noise_params(y, mu);
    let noise = prior::sample_inverse_gamma(shape, scale, rng);
    NoiseDraw {
        noise,
        log_density: prior::log_inverse_gamma(noise, shape, scale),
        shape,
        scale,
    }
}

/// Unconstrained coordinates `[z_theta..., log eta]` of a state.
pub fn to_unconstrained(expr: &KernelExpr, noise: f64) -> Vec<f64> {
    let mut z: Vec<f64> = expr
        .params()
        .iter()
        .zip(expr.param_domains())
        .map(|(x, d)| prior::to_unconstrained(d, *x))
        .collect();
    z.push(noise.ln());
    z
}

/// Inverse of [`to_unconstrained`] for the structure of `expr`.
pub fn from_unconstrained(expr: &KernelExpr, z: &[f64]) -> Result<(KernelExpr, f64)> {
    let domains = expr.param_domains();
    if z.len() != domains.len() + 1 {
        return Err(Error::Contract("unconstrained vector has the wrong length".into()));
    }
    let theta: Vec<f64> = z
        .iter()
        .zip(&domains)
        .map(|(zi, d)| prior::from_unconstrained(*d, *zi))
        .collect();
    Ok((expr.with_params(&theta)?, z[domains.len()].exp()))
}

/// Log target in unconstrained coordinates: log joint plus log Jacobian.
///
/// Up to the constant structure prior this equals the log likelihood plus
/// standard-normal terms for every kernel coordinate and `-z - exp(-z)` for
/// `z = log eta`.
pub fn log_joint_unconstrained(
    expr: &KernelExpr,
    z: &[f64],
    obs: Observations<'_>,
    cfg: &PcfgConfig,
) -> Result<f64> {
    let (e, noise) = from_unconstrained(expr, z)?;
    let fit = Fit::new(&e, noise, obs)?;
    let domains = expr.param_domains();
    let jac: f64 = z
        .iter()
        .zip(&domains)
        .map(|(zi, d)| prior::log_jacobian(*d, *zi))
        .sum::<f64>()
        + z[domains.len()];
    Ok(prior::log_prior(&e, cfg) + prior::log_noise_prior(noise)? + fit.log_likelihood() + jac)
}

/// Log-likelihood gradient in natural coordinates `[theta..., eta]`, split into
/// the data-fit term `0.5 a^T dK a` and the complexity term `-0.5 tr(K^-1 dK)`.
#[derive(Clone, Debug)]
pub struct LikelihoodGradient {
    pub quadratic: Vec<f64>,
    pub trace: Vec<f64>,
}

impl LikelihoodGradient {
    pub fn total(&self) -> Vec<f64> {
        self.quadratic.iter().zip(&self.trace).map(|(a, b)| a + b).collect()
    }
}

pub fn likelihood_gradient(
    expr: &KernelExpr,
    noise: f64,
    obs: Observations<'_>,
) -> Result<LikelihoodGradient> {
    let d = expr.param_count();
    let fit = Fit::new(expr, noise, obs)?;
    let Some(factor) = fit.factor() else {
        return Ok(LikelihoodGradient {
            quadratic: vec![0.0; d + 1],
            trace: vec![0.0; d + 1],
        });
    };
    let alpha = fit.alpha();
    let aat = alpha * alpha.transpose();
    let kinv = factor.inverse();
    let mut quadratic = kernel_weighted_gradient(expr, obs.times, &aat);
    let mut trace = kernel_weighted_gradient(expr, obs.times, &kinv);
    quadratic.iter_mut().for_each(|g| *g *= 0.5);
    trace.iter_mut().for_each(|g| *g *= -0.5);
    quadratic.push(0.5 * alpha.dot(alpha));
    trace.push(-0.5 * kinv.trace());
    Ok(LikelihoodGradient { quadratic, trace })
}

/// Gradient of [`log_joint_unconstrained`] with respect to `z`.
pub fn grad_log_joint_params(expr: &KernelExpr, z: &[f64], obs: Observations<'_>) -> Result<Vec<f64>> {
    let (e, noise) = from_unconstrained(expr, z)?;
    let domains = expr.param_domains();
    let lik = likelihood_gradient(&e, noise, obs)?.total();
    let mut grad = Vec::with_capacity(z.len());
    for (i, d) in domains.iter().enumerate() {
        let dx_dz = prior::log_jacobian(*d, z[i]).exp();
        grad.push(lik[i] * dx_dz - z[i]);
    }
    let zi = z[domains.len()];
    grad.push(lik[domains.len()] * noise - 1.0 + (-zi).exp());
    Ok(grad)
}

/// Log-likelihood and its gradient with respect to the unconstrained
/// coordinates `[z_theta, log eta]`.
pub fn loglik_and_grad_unconstrained(
    expr: &KernelExpr,
    z: &[f64],
    obs: Observations<'_>,
) -> Result<(f64, Vec<f64>)> {
    let (value, grad, _) = loglik_parts(expr, z, obs)?;
    Ok((value, grad))
}

fn loglik_parts(expr: &KernelExpr, z: &[f64], obs: Observations<'_>) -> Result<(f64, Vec<f64>, Fit)> {
    let (e, noise) = from_unconstrained(expr, z)?;
    let domains = expr.param_domains();
    let fit = Fit::new(&e, noise, obs)?;
    let d = domains.len();
    let mut grad = vec![0.0; d + 1];
    if let Some(factor) = fit.factor() {
        let alpha = fit.alpha();
        let mut w = factor.inverse();
        w.ger(1.0, alpha, alpha, -1.0);
        let g = kernel_weighted_gradient(&e, obs.times, &w);
        for (i, dom) in domains.iter().enumerate() {
            grad[i] = 0.5 * g[i] * prior::log_jacobian(*dom, z[i]).exp();
        }
        grad[d] = 0.5 * w.trace() * noise;
    }
    Ok((fit.log_likelihood(), grad, fit))
}

/// Gradient and value of the unconstrained log target in one pass.
pub(crate) fn value_and_grad_unconstrained(
    expr: &KernelExpr,
    z: &[f64],
    obs: Observations<'_>,
) -> Result<(f64, Vec<f64>, Fit)> {
    let (lik, mut grad, fit) = loglik_parts(expr, z, obs)?;
    let d = z.len() - 1;
    let zn = z[d];
    let value = lik - 0.5 * z[..d].iter().map(|v| v * v).sum::<f64>() - zn - (-zn).exp();
    for i in 0..d {
        grad[i] -= z[i];
    }
    grad[d] += -1.0 + (-zn).exp();
    Ok((value, grad, fit))
}
