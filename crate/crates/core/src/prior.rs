//! Generative prior over kernel structures, kernel parameters and noise.
//!
//! Structures come from a probabilistic context-free grammar with an optional
//! depth cap; at the cap the leaf rule is forced. Parameters are i.i.d.
//! LogNormal(0, 1) except the gamma-exponential exponent, which is
//! `2 * logistic(z)` with `z ~ Normal(0, 1)`. Noise is InverseGamma(1, 1).
//!
//! Every parameter has an unconstrained coordinate (log, or logit of `x / 2`
//! for the exponent) in which its prior is exactly standard normal.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{BaseKind, KernelExpr, Operator, ParamDomain};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Production probabilities of the kernel grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcfgConfig {
    pub p_leaf: f64,
    pub p_sum: f64,
    pub p_product: f64,
    pub p_change_point: f64,
    /// Probabilities of LIN, PER, GE.
    pub base_probs: [f64; 3],
    /// Maximum tree depth (root has depth 1); `None` disables the cap.
    pub max_depth: Option<usize>,
}

impl Default for PcfgConfig {
    fn default() -> Self {
        PcfgConfig {
            p_leaf: 0.7,
            p_sum: 0.1,
            p_product: 0.1,
            p_change_point: 0.1,
            base_probs: [1.0 / 3.0; 3],
            max_depth: Some(10),
        }
    }
}

impl PcfgConfig {
    pub fn validate(&self) -> Result<()> {
        let ops = [self.p_sum, self.p_product, self.p_change_point];
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(self.p_leaf) && self.p_leaf < 1.0) {
            return Err(Error::Config(format!("p_leaf = {} must lie in (0, 1)", self.p_leaf)));
        }
        if !ops.iter().all(|&p| p.is_finite() && p >= 0.0) || !ops.iter().any(|&p| p > 0.0) {
            return Err(Error::Config("operator probabilities must be non-negative".into()));
        }
        if ((self.p_leaf + ops.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("p_leaf + operator probabilities must sum to 1".into()));
        }
        if !self.base_probs.iter().all(|&p| p.is_finite() && p >= 0.0)
            || (self.base_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config("base kernel probabilities must sum to 1".into()));
        }
        match self.max_depth {
            Some(0) => Err(Error::Config("max_depth must be at least 1".into())),
            None if self.p_leaf <= 0.5 => Err(Error::Config(
                "an uncapped grammar needs p_leaf > 0.5 for finite expected size".into(),
            )),
            _ => Ok(()),
        }
    }

    fn capped(&self, depth: usize) -> bool {
        self.max_depth.is_some_and(|cap| depth >= cap)
    }

    /// Probability of the leaf rule for a node at `depth`.
    pub fn leaf_prob(&self, depth: usize) -> f64 {
        if self.capped(depth) {
            1.0
        } else {
            self.p_leaf
        }
    }

    fn op_weights(&self) -> [f64; 3] {
        [self.p_sum, self.p_product, self.p_change_point]
    }

    /// Probability of choosing operator `op` given that a node is an operator.
    pub fn op_conditional_prob(&self, op: &Operator) -> f64 {
        let w = self.op_weights();
        let total: f64 = w.iter().sum();
        w[op_index(op)] / total
    }

    fn sample_op_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        categorical(&self.op_weights(), rng)
    }
}

fn op_index(op: &Operator) -> usize {
    match op {
        Operator::Sum => 0,
        Operator::Product => 1,
        Operator::ChangePoint(_) => 2,
    }
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Largest |z| accepted for the exponent coordinate; beyond it `2 * logistic(z)` rounds to 2.
pub const EXPONENT_Z_LIMIT: f64 = 30.0;

pub fn std_normal_logpdf(z: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * z * z
}

/// Unconstrained coordinate of a parameter value.
pub fn to_unconstrained(domain: ParamDomain, x: f64) -> f64 {
    match domain {
        ParamDomain::Exponent => {
            let p = 0.5 * x;
            p.ln() - (1.0 - p).ln()
        }
        _ => x.ln(),
    }
}

pub fn from_unconstrained(domain: ParamDomain, z: f64) -> f64 {
    match domain {
        ParamDomain::Exponent => 2.0 * logistic(z),
        _ => z.exp(),
    }
}

/// log |dx/dz| of [`from_unconstrained`].
pub fn log_jacobian(domain: ParamDomain, z: f64) -> f64 {
    match domain {
        ParamDomain::Exponent => {
            let s = logistic(z);
            LN_2 + s.ln() + (1.0 - s).ln()
        }
        _ => z,
    }
}

/// d/dz of [`log_jacobian`].
pub fn log_jacobian_grad(domain: ParamDomain, z: f64) -> f64 {
    match domain {
        ParamDomain::Exponent => 1.0 - 2.0 * logistic(z),
        _ => 1.0,
    }
}

/// Draw one parameter from its prior.
pub fn sample_param<R: Rng + ?Sized>(domain: ParamDomain, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    from_unconstrained(domain, z)
}

/// Prior log-density of one parameter value (with respect to Lebesgue measure on x).
pub fn log_param_prior(domain: ParamDomain, x: f64) -> f64 {
    match domain {
        ParamDomain::Exponent => {
            if !(x > 0.0 && x < 2.0) {
                return f64::NEG_INFINITY;
            }
            std_normal_logpdf(to_unconstrained(domain, x)) + LN_2 - x.ln() - (2.0 - x).ln()
        }
        _ => {
            if !(x > 0.0) || !x.is_finite() {
                return f64::NEG_INFINITY;
            }
            let lx = x.ln();
            -lx - LN_SQRT_2PI - 0.5 * lx * lx
        }
    }
}

pub fn log_params_prior(values: &[f64], domains: &[ParamDomain]) -> f64 {
    values
        .iter()
        .zip(domains)
        .map(|(x, d)| log_param_prior(*d, *x))
        .sum()
}

/// Draws an operator from the grammar's operator distribution, with prior parameters.
pub fn sample_operator<R: Rng + ?Sized>(cfg: &PcfgConfig, rng: &mut R) -> Operator {
    match cfg.sample_op_index(rng) {
        0 => Operator::Sum,
        1 => Operator::Product,
        _ => {
            let proto = Operator::ChangePoint([0.0; 2]);
            let loc = sample_param(proto.domain(0), rng);
            let width = sample_param(proto.domain(1), rng);
            Operator::ChangePoint([loc, width])
        }
    }
}

/// Draws a structure rooted at `depth` from the grammar, with prior parameters.
pub fn sample_subtree<R: Rng + ?Sized>(cfg: &PcfgConfig, depth: usize, rng: &mut R) -> KernelExpr {
    let is_leaf = cfg.capped(depth) || rng.random::<f64>() < cfg.p_leaf;
    if is_leaf {
        let kind = BaseKind::ALL[categorical(&cfg.base_probs, rng)];
        let mut params = [0.0; 3];
        for (i, p) in params.iter_mut().enumerate() {
            *p = sample_param(kind.domain(i), rng);
        }
        return KernelExpr::base(kind, params);
    }
    let op = sample_operator(cfg, rng);
    let left = sample_subtree(cfg, depth + 1, rng);
    let right = sample_subtree(cfg, depth + 1, rng);
    KernelExpr::node(op, left, right)
}

/// Draws a full kernel expression from the prior.
pub fn sample_structure<R: Rng + ?Sized>(cfg: &PcfgConfig, rng: &mut R) -> KernelExpr {
    sample_subtree(cfg, 1, rng)
}

/// Log-probability of the structure alone (rule choices) for a subtree rooted at `depth`.
pub fn log_structure_prior(expr: &KernelExpr, depth: usize, cfg: &PcfgConfig) -> f64 {
    match expr {
        KernelExpr::Base { kind, .. } => {
            cfg.leaf_prob(depth).ln() + cfg.base_probs[kind.index()].ln()
        }
        KernelExpr::Node { op, children } => {
            let p_node = if cfg.capped(depth) {
                0.0
            } else {
                cfg.op_weights()[op_index(op)]
            };
            p_node.ln()
                + log_structure_prior(&children[0], depth + 1, cfg)
                + log_structure_prior(&children[1], depth + 1, cfg)
        }
    }
}

/// Log-density of a subtree rooted at `depth`: rule probabilities times parameter priors.
pub fn log_prior_subtree(expr: &KernelExpr, depth: usize, cfg: &PcfgConfig) -> f64 {
    log_structure_prior(expr, depth, cfg) + log_params_prior(&expr.params(), &expr.param_domains())
}

/// Log prior of a complete expression.
pub fn log_prior(expr: &KernelExpr, cfg: &PcfgConfig) -> f64 {
    log_prior_subtree(expr, 1, cfg)
}

/// Draw eta ~ InverseGamma(1, 1).
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    1.0 / e
}

/// Log-density of InverseGamma(1, 1) at `eta`.
pub fn log_noise_prior(eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance {eta} must be positive")));
    }
    Ok(log_inverse_gamma(eta, 1.0, 1.0))
}

/// Log-density of InverseGamma(shape, scale) at `x > 0`.
pub fn log_inverse_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * x.ln()
        - scale / x
}

/// Draw from InverseGamma(shape, scale).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = rand_distr::Gamma::new(shape, 1.0).expect("valid gamma shape");
    scale / g.sample(rng)
}

/// log sum exp, robust to `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
