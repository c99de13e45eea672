//! Comparison searchers: greedy BIC structure search with gradient-based
//! parameter fitting, and independent MCMC chains.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{self, Observations};
use crate::kernel::{BaseKind, KernelExpr, Operator, ParamDomain};
use crate::prior::{self, EXPONENT_Z_LIMIT};
use crate::smc::{self, rng_stream, ScheduleKind, SmcConfig, SmcModel, SmcOutput};

const Z_BOUND: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub max_depth: usize,
    /// Random initializations per candidate, besides the warm start.
    pub restarts: usize,
    /// Gradient-ascent iterations per initialization.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_depth: 10,
            restarts: 3,
            iterations: 100,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Bayesian information criterion; the noise variance counts as a parameter.
pub fn bic(loglik: f64, param_count: usize, n: usize) -> f64 {
    -2.0 * loglik + (param_count + 1) as f64 * (n as f64).ln()
}

/// BIC of `expr` with its current parameters and noise variance.
pub fn bic_score(expr: &KernelExpr, noise: f64, obs: Observations<'_>) -> Result<f64> {
    let ll = gp::Fit::new(expr, noise, obs)?.log_likelihood();
    Ok(bic(ll, expr.param_count(), obs.len()))
}

fn clamp(expr: &KernelExpr, z: &mut [f64]) {
    let domains = expr.param_domains();
    for (i, v) in z.iter_mut().enumerate() {
        let limit = match domains.get(i) {
            Some(ParamDomain::Exponent) => EXPONENT_Z_LIMIT,
            _ => Z_BOUND,
        };
        *v = v.clamp(-limit, limit);
    }
}

/// Maximizes the log-likelihood from `z` by gradient ascent with
/// backtracking; returns the final value and point.
pub fn ascend(
    expr: &KernelExpr,
    mut z: Vec<f64>,
    obs: Observations<'_>,
    iterations: usize,
) -> Option<(f64, Vec<f64>)> {
    clamp(expr, &mut z);
    let (mut ll, mut g) = gp::loglik_and_grad_unconstrained(expr, &z, obs).ok()?;
    if !ll.is_finite() {
        return None;
    }
    let mut step = 0.1;
    for _ in 0..iterations {
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if !g2.is_finite() || g2.sqrt() < 1e-8 {
            break;
        }
        let mut moved = false;
        for _ in 0..30 {
            let mut cand: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            clamp(expr, &mut cand);
            if let Ok((l, gr)) = gp::loglik_and_grad_unconstrained(expr, &cand, obs) {
                if l.is_finite() && l > ll + 1e-4 * step * g2 && gr.iter().all(|v| v.is_finite()) {
                    z = cand;
                    ll = l;
                    g = gr;
                    step *= 1.5;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Some((ll, z))
}

fn prior_point<R: Rng + ?Sized>(expr: &KernelExpr, rng: &mut R) -> Vec<f64> {
    let mut z: Vec<f64> = (0..expr.param_count()).map(|_| StandardNormal.sample(rng)).collect();
    z.push(prior::sample_noise(rng).ln());
    z
}

/// A structure with fitted parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub expr: KernelExpr,
    pub noise: f64,
    pub loglik: f64,
    pub bic: f64,
}

/// Fits `expr` from its own parameters (warm start) and from `restarts`
/// prior draws, keeping the best log-likelihood.
pub fn fit_structure(
    expr: &KernelExpr,
    noise: f64,
    obs: Observations<'_>,
    restarts: usize,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Scored> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..=restarts {
        let z0 = if r == 0 {
            gp::to_unconstrained(expr, noise)
        } else {
            prior_point(expr, rng)
        };
        if let Some((ll, z)) = ascend(expr, z0, obs, iterations) {
            if best.as_ref().is_none_or(|(b, _)| ll > *b) {
                best = Some((ll, z));
            }
        }
    }
    let (ll, z) = best?;
    let (expr, noise) = gp::from_unconstrained(expr, &z).ok()?;
    Some(Scored {
        bic: bic(ll, expr.param_count(), obs.len()),
        expr,
        noise,
        loglik: ll,
    })
}

/// One scored candidate of a greedy search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub depth: usize,
    pub structure: String,
    pub bic: f64,
    pub loglik: f64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct GreedyResult {
    pub best: Scored,
    /// Incumbent after each accepted depth.
    pub path: Vec<Scored>,
    pub trace: Vec<TraceRow>,
}

fn random_base<R: Rng + ?Sized>(kind: BaseKind, rng: &mut R) -> KernelExpr {
    let p = [0, 1, 2].map(|i| prior::sample_param(kind.domain(i), rng));
    KernelExpr::base(kind, p)
}

/// One-step elaborations of `expr`: each leaf `b` becomes `b op B` for every
/// operator and base kind, or is swapped for a different base kind.
pub fn expansions<R: Rng + ?Sized>(expr: &KernelExpr, rng: &mut R) -> Vec<KernelExpr> {
    let mut out = Vec::new();
    for path in expr.node_paths() {
        let Ok(leaf @ KernelExpr::Base { kind: leaf_kind, .. }) = expr.get(&path) else {
            continue;
        };
        for kind in BaseKind::ALL {
            for op in 0..3 {
                let op = match op {
                    0 => Operator::Sum,
                    1 => Operator::Product,
                    _ => Operator::ChangePoint([
                        prior::sample_param(ParamDomain::NonNegative, rng),
                        prior::sample_param(ParamDomain::Positive, rng),
                    ]),
                };
                let sub = KernelExpr::node(op, leaf.clone(), random_base(kind, rng));
                out.push(expr.subtree_replace_at(&path, sub).expect("path from node_paths"));
            }
            if kind != *leaf_kind {
                let swapped = random_base(kind, rng);
                out.push(expr.subtree_replace_at(&path, swapped).expect("path from node_paths"));
            }
        }
    }
    out
}

fn candidate_key(depth: usize, index: usize) -> u64 {
    ((depth as u64) << 32) | index as u64
}

/// Greedy BIC search over structures of growing size.
pub fn greedy_search(obs: Observations<'_>, cfg: &SearchConfig) -> Result<GreedyResult> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(Error::InvalidArgument("greedy search needs data".into()));
    }
    let start = Instant::now();
    let mut trace = Vec::new();
    let score_all = |depth: usize, cands: Vec<KernelExpr>, noise: f64, trace: &mut Vec<TraceRow>| {
        let scored: Vec<Option<Scored>> = cands
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut rng = rng_stream(cfg.seed, candidate_key(depth, i), 0);
                fit_structure(c, noise, obs, cfg.restarts, cfg.iterations, &mut rng)
            })
            .collect();
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        for s in scored.iter().flatten() {
            trace.push(TraceRow {
                depth,
                structure: s.expr.structure_string(),
                bic: s.bic,
                loglik: s.loglik,
                elapsed_ms,
            });
        }
        scored
            .into_iter()
            .flatten()
            .min_by(|a, b| a.bic.total_cmp(&b.bic))
    };

    let mut rng = rng_stream(cfg.seed, candidate_key(0, 0), 1);
    let roots: Vec<KernelExpr> = BaseKind::ALL.iter().map(|k| random_base(*k, &mut rng)).collect();
    let noise = prior::sample_noise(&mut rng);
    let mut incumbent = score_all(1, roots, noise, &mut trace).ok_or_else(|| Error::Numerical {
        kernel: "every depth-1 candidate".into(),
    })?;
    let mut path = vec![incumbent.clone()];
    for depth in 2..=cfg.max_depth {
        let mut rng = rng_stream(cfg.seed, candidate_key(depth, 0), 1);
        let cands = expansions(&incumbent.expr, &mut rng);
        match score_all(depth, cands, incumbent.noise, &mut trace) {
            Some(best) if best.bic < incumbent.bic => {
                incumbent = best;
                path.push(incumbent.clone());
            }
            _ => break,
        }
    }
    Ok(GreedyResult {
        best: incumbent,
        path,
        trace,
    })
}

/// Independent MCMC chains on the full data, returned with equal weights.
///
/// Identical to [`smc::run_smc`] with a single-batch schedule except that
/// the importance weights from the prior are replaced by their mean.
pub fn mcmc_search<M: SmcModel>(
    model: &M,
    obs: Observations<'_>,
    cfg: &SmcConfig,
) -> Result<SmcOutput<M::Particle>> {
    let cfg = SmcConfig {
        schedule: ScheduleKind::Single,
        ..cfg.clone()
    };
    let mut out = smc::run_smc(model, obs, &cfg)?;
    let mean = out.collection.log_marginal();
    out.collection.log_weights.iter_mut().for_each(|w| *w = mean);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_arithmetic() {
        assert!((bic(-5.0, 3, 10) - (10.0 + 4.0 * 10f64.ln())).abs() < 1e-12);
        assert!((bic(-5.0, 4, 10) - bic(-5.0, 3, 10) - 10f64.ln()).abs() < 1e-12);
        assert!(bic(-5.0, 3, 10) < bic(-5.0, 6, 10));
    }

    #[test]
    fn expansion_counts() {
        let mut rng = rng_stream(0, 0, 0);
        let leaf = KernelExpr::linear([1.0, 1.0, 1.0]);
        // 3 kinds x 3 operators, plus 2 swaps.
        assert_eq!(expansions(&leaf, &mut rng).len(), 11);
        let two = KernelExpr::sum(leaf.clone(), KernelExpr::periodic([1.0, 1.0, 1.0]));
        let ex = expansions(&two, &mut rng);
        assert_eq!(ex.len(), 22);
        assert!(ex.iter().all(|e| e.node_count() >= two.node_count()));
    }
}
