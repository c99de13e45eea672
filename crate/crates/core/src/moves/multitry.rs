//! Auxiliary-variable parameter proposals shared by the structure moves.
//!
//! A structural edit at `path` splits the parameters of each endpoint into a
//! shared block `S` (kept across the edit) and an own block (`D` on the source,
//! `F` on the destination). The forward proposal draws `U` candidate vectors
//! `S' ++ F`, selects one by importance weight, and draws `U - 1` reverse
//! vectors `S ++ D` around the selected candidate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gp::{self, Fit, Observations};
use crate::kernel::{KernelExpr, ParamDomain, TreePath};
use crate::prior::{self, log_sum_exp, std_normal_logpdf, PcfgConfig};

/// Auxiliary parameter vectors carried by a multi-try proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxParams {
    /// Candidates `S' ++ F` on the destination structure.
    pub forward: Vec<Vec<f64>>,
    /// Index of the selected candidate.
    pub selected: usize,
    /// Reverse vectors `S ++ D` on the source structure, excluding the current one.
    pub reverse: Vec<Vec<f64>>,
    /// Slot at which the current parameters are inserted among `reverse`.
    pub reverse_selected: usize,
}

impl AuxParams {
    pub fn count(&self) -> usize {
        self.forward.len()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let u = self.forward.len();
        if u == 0
            || self.reverse.len() + 1 != u
            || self.selected >= u
            || self.reverse_selected >= u
        {
            return Err(Error::Contract(format!(
                "inconsistent auxiliary parameters: {} forward, {} reverse, selected {}, reverse slot {}",
                u,
                self.reverse.len(),
                self.selected,
                self.reverse_selected
            )));
        }
        Ok(())
    }

    /// Swaps the roles of forward and reverse vectors around the current
    /// parameters, returning the mirrored aux and the selected forward vector.
    pub(crate) fn swap(&self, current: Vec<f64>) -> Result<(AuxParams, Vec<f64>)> {
        self.check()?;
        let mut forward = self.reverse.clone();
        forward.insert(self.reverse_selected, current);
        let mut reverse = self.forward.clone();
        let chosen = reverse.remove(self.selected);
        Ok((
            AuxParams {
                forward,
                selected: self.reverse_selected,
                reverse,
                reverse_selected: self.selected,
            },
            chosen,
        ))
    }
}

/// An expression viewed as the endpoint of an edit at `path`.
///
/// Without a core, the shared block is every parameter outside `path` and the
/// own block is the subtree at `path`. With a core (a path relative to the
/// edited subtree), the core subtree's parameters join the shared block and the
/// own block is the rest of the edited subtree.
#[derive(Clone, Debug)]
pub(crate) struct Endpoint<'a> {
    pub expr: &'a KernelExpr,
    pub path: &'a TreePath,
    pub core: Option<&'a TreePath>,
}

impl Endpoint<'_> {
    fn edited(&self) -> Result<&KernelExpr> {
        self.expr.get(self.path)
    }

    /// `(shared, own)` parameter values.
    pub fn split(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut shared = self.expr.params_outside(self.path)?;
        let sub = self.edited()?;
        let own = match self.core {
            None => sub.params(),
            Some(core) => {
                shared.extend(sub.get(core)?.params());
                sub.params_outside(core)?
            }
        };
        Ok((shared, own))
    }

    /// `(shared, own)` parameter domains.
    pub fn domains(&self) -> Result<(Vec<ParamDomain>, Vec<ParamDomain>)> {
        let mut shared = self.expr.param_domains_outside(self.path)?;
        let sub = self.edited()?;
        let own = match self.core {
            None => sub.param_domains(),
            Some(core) => {
                shared.extend(sub.get(core)?.param_domains());
                sub.param_domains_outside(core)?
            }
        };
        Ok((shared, own))
    }

    /// Expression with parameters taken from `shared ++ own`.
    pub fn build(&self, values: &[f64]) -> Result<KernelExpr> {
        let n_outside = self.expr.param_domains_outside(self.path)?.len();
        let sub = self.edited()?;
        let n_core = match self.core {
            None => 0,
            Some(core) => sub.get(core)?.param_count(),
        };
        let n_own = sub.param_count() - n_core;
        if values.len() != n_outside + n_core + n_own {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                n_outside + n_core + n_own,
                values.len()
            )));
        }
        let (outside, rest) = values.split_at(n_outside);
        let (core_vals, own) = rest.split_at(n_core);
        let new_sub = match self.core {
            None => sub.with_params(own)?,
            Some(core) => {
                let with_own = sub.with_params_outside(core, own)?;
                let core_sub = sub.get(core)?.with_params(core_vals)?;
                with_own.subtree_replace_at(core, core_sub)?
            }
        };
        self.expr
            .subtree_replace_at(self.path, new_sub)?
            .with_params_outside(self.path, outside)
    }
}

/// Random-walk mean of one shared coordinate in unconstrained space.
fn walk_mean(domain: ParamDomain, z: f64, delta: f64) -> f64 {
    match domain {
        ParamDomain::Exponent => z,
        _ => z - delta / 2.0,
    }
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    std_normal_logpdf((x - mean) / var.sqrt()) - 0.5 * var.ln()
}

/// Draws one vector `shared' ++ own` around `center`.
pub(crate) fn draw<R: Rng + ?Sized>(
    center: &[f64],
    shared: &[ParamDomain],
    own: &[ParamDomain],
    delta: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(shared.len() + own.len());
    for (x, d) in center.iter().zip(shared) {
        if delta == 0.0 {
            out.push(*x);
        } else {
            let mean = walk_mean(*d, prior::to_unconstrained(*d, *x), delta);
            let eps: f64 = StandardNormal.sample(rng);
            out.push(prior::from_unconstrained(*d, mean + delta.sqrt() * eps));
        }
    }
    for d in own {
        let eps: f64 = StandardNormal.sample(rng);
        out.push(prior::from_unconstrained(*d, eps));
    }
    out
}

/// Log-density, in unconstrained coordinates, of drawing `values` around
/// `center`. With `delta == 0` the shared block is a point mass and is omitted.
pub(crate) fn log_q(
    values: &[f64],
    center: &[f64],
    shared: &[ParamDomain],
    own: &[ParamDomain],
    delta: f64,
) -> f64 {
    let mut lq = 0.0;
    if delta > 0.0 {
        for ((x, c), d) in values.iter().zip(center).zip(shared) {
            let z = prior::to_unconstrained(*d, *x);
            let mean = walk_mean(*d, prior::to_unconstrained(*d, *c), delta);
            lq += normal_logpdf(z, mean, delta);
        }
    }
    for (x, d) in values[shared.len()..].iter().zip(own) {
        lq += std_normal_logpdf(prior::to_unconstrained(*d, *x));
    }
    lq
}

/// Log target in unconstrained kernel coordinates with `eta` held fixed.
pub(crate) fn log_target(
    expr: &KernelExpr,
    noise: f64,
    fit: &Fit,
    cfg: &PcfgConfig,
) -> Result<f64> {
    let jac: f64 = expr
        .params()
        .iter()
        .zip(expr.param_domains())
        .map(|(x, d)| prior::log_jacobian(d, prior::to_unconstrained(d, *x)))
        .sum();
    Ok(prior::log_prior(expr, cfg) + prior::log_noise_prior(noise)? + fit.log_likelihood() + jac)
}

/// Log importance weights of the candidate vectors on `end` at noise `noise`.
pub(crate) struct Weighted {
    pub log_w: Vec<f64>,
    pub fits: Vec<Option<Fit>>,
}

pub(crate) fn weigh(
    end: &Endpoint<'_>,
    sets: &[Vec<f64>],
    center: &[f64],
    noise: f64,
    delta: f64,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    keep: Option<usize>,
) -> Result<Weighted> {
    let (shared, own) = end.domains()?;
    let mut log_w = Vec::with_capacity(sets.len());
    let mut fits = Vec::with_capacity(sets.len());
    for (u, set) in sets.iter().enumerate() {
        let expr = end.build(set)?;
        let (lw, fit) = match Fit::new(&expr, noise, obs) {
            Ok(fit) => {
                let lt = log_target(&expr, noise, &fit, cfg)?;
                (lt - log_q(set, center, &shared, &own, delta), Some(fit))
            }
            Err(Error::Numerical { .. }) => (f64::NEG_INFINITY, None),
            Err(e) => return Err(e),
        };
        log_w.push(if lw.is_nan() { f64::NEG_INFINITY } else { lw });
        fits.push(if keep.is_none_or(|k| k == u) { fit } else { None });
    }
    Ok(Weighted { log_w, fits })
}

/// Selection terms `log w[selected] - log sum w`.
pub(crate) fn log_selection(log_w: &[f64], selected: usize) -> f64 {
    log_w[selected] - log_sum_exp(log_w)
}

/// Draws an index with probability proportional to `exp(log_w)`.
pub(crate) fn select<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Option<usize> {
    let total = log_sum_exp(log_w);
    if !total.is_finite() {
        return None;
    }
    let mut u = rng.random::<f64>();
    for (i, lw) in log_w.iter().enumerate() {
        let p = (lw - total).exp();
        if u < p {
            return Some(i);
        }
        u -= p;
    }
    log_w.iter().rposition(|w| w.is_finite())
}

/// Conditional mean of f under a fitted candidate.
pub(crate) fn mean_of(expr: &KernelExpr, obs: Observations<'_>, fit: &Fit) -> Vec<f64> {
    gp::conditional_mean_from(expr, obs, fit)
}
