//! Involutive MCMC kernels over `(k, theta, eta)`.
//!
//! Structure moves (Subtree-Replace and Detach-Attach) are written as a
//! proposal of auxiliary variables (a trace) followed by a pure involution on
//! `(state, trace)`. The log acceptance ratio is a deterministic function of
//! `(state, trace)`, and evaluating it on the image of the involution yields
//! its negation.

mod detach_attach;
mod hmc;
pub mod multitry;
mod replace;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{gibbs_noise_params, ModelState, Observations};
use crate::prior::{self, PcfgConfig};

pub use detach_attach::{
    detach_attach_log_ratio, involution_detach_attach, propose_detach_attach,
    sample_detach_attach_trace, Direction, DetachAttachTrace,
};
pub use hmc::{hmc_params, leapfrog_energy_error};
pub use multitry::AuxParams;
pub use replace::{
    involution_subtree_replace, propose_subtree_replace, replace_log_ratio,
    sample_replace_trace, sample_replace_trace_at, ReplaceTrace,
};

use multitry::{Endpoint, Weighted};

/// How many auxiliary candidates a multi-try proposal draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TryCount {
    /// A fixed count.
    Fixed(usize),
    /// `max(1, d(k), d(k'))`, with `d` the parameter count.
    ParamCount,
}

impl TryCount {
    /// Candidate count for a transition between structures with `d_from` and
    /// `d_to` parameters; symmetric so a move and its reverse agree.
    pub fn resolve(self, d_from: usize, d_to: usize) -> usize {
        match self {
            TryCount::Fixed(u) => u.max(1),
            TryCount::ParamCount => d_from.max(d_to).max(1),
        }
    }
}

/// Tuning of the rejuvenation kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoveConfig {
    /// Probability of the Detach direction.
    pub detach_prob: f64,
    pub try_count: TryCount,
    /// Variance of the shared-parameter random walk in log coordinates.
    pub walk_variance: f64,
    /// Use the multi-try parameter proposal for Detach-Attach as well.
    pub detach_attach_multi_try: bool,
    /// Probability of continuing an Attach scaffold by embedding the subtree.
    pub embed_prob: f64,
    pub hmc_step_size: f64,
    pub hmc_steps: usize,
    /// Probability of Subtree-Replace in each rejuvenation iteration.
    pub replace_weight: f64,
}

impl Default for MoveConfig {
    fn default() -> Self {
        MoveConfig {
            detach_prob: 0.5,
            try_count: TryCount::ParamCount,
            walk_variance: 0.1,
            detach_attach_multi_try: false,
            embed_prob: 0.5,
            hmc_step_size: 0.02,
            hmc_steps: 10,
            replace_weight: 0.5,
        }
    }
}

impl MoveConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.detach_prob) {
            return Err(Error::Config(format!(
                "detach_prob must lie in (0, 1), got {}",
                self.detach_prob
            )));
        }
        if !open_unit(self.embed_prob) {
            return Err(Error::Config(format!(
                "embed_prob must lie in (0, 1), got {}",
                self.embed_prob
            )));
        }
        if let TryCount::Fixed(0) = self.try_count {
            return Err(Error::Config("try_count must be at least 1".into()));
        }
        if !(self.walk_variance >= 0.0 && self.walk_variance.is_finite()) {
            return Err(Error::Config(format!(
                "walk_variance must be finite and >= 0, got {}",
                self.walk_variance
            )));
        }
        if !(self.hmc_step_size > 0.0 && self.hmc_step_size.is_finite()) {
            return Err(Error::Config(format!(
                "hmc_step_size must be positive, got {}",
                self.hmc_step_size
            )));
        }
        if !(0.0..=1.0).contains(&self.replace_weight) {
            return Err(Error::Config(format!(
                "replace_weight must lie in [0, 1], got {}",
                self.replace_weight
            )));
        }
        Ok(())
    }
}

/// Result of one Metropolis-Hastings step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub accepted: bool,
    /// Log acceptance ratio; `-inf` for outright rejections.
    pub log_ratio: f64,
}

impl Step {
    pub(crate) fn rejected() -> Self {
        Step {
            accepted: false,
            log_ratio: f64::NEG_INFINITY,
        }
    }
}

/// Proposal and acceptance counts per kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub replace_proposed: u64,
    pub replace_accepted: u64,
    pub detach_attach_proposed: u64,
    pub detach_attach_accepted: u64,
    pub hmc_proposed: u64,
    pub hmc_accepted: u64,
}

impl MoveStats {
    pub fn proposed(&self) -> u64 {
        self.replace_proposed + self.detach_attach_proposed + self.hmc_proposed
    }

    pub fn accepted(&self) -> u64 {
        self.replace_accepted + self.detach_attach_accepted + self.hmc_accepted
    }

    pub fn structure_acceptance(&self) -> f64 {
        ratio(
            self.replace_accepted + self.detach_attach_accepted,
            self.replace_proposed + self.detach_attach_proposed,
        )
    }

    pub fn hmc_acceptance(&self) -> f64 {
        ratio(self.hmc_accepted, self.hmc_proposed)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl std::ops::AddAssign for MoveStats {
    fn add_assign(&mut self, o: Self) {
        self.replace_proposed += o.replace_proposed;
        self.replace_accepted += o.replace_accepted;
        self.detach_attach_proposed += o.detach_attach_proposed;
        self.detach_attach_accepted += o.detach_attach_accepted;
        self.hmc_proposed += o.hmc_proposed;
        self.hmc_accepted += o.hmc_accepted;
    }
}

/// Runs `steps` iterations of one structure move followed by one HMC step.
pub fn rejuvenate<R: Rng + ?Sized>(
    state: &mut ModelState,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
    steps: usize,
    rng: &mut R,
) -> Result<MoveStats> {
    let mut stats = MoveStats::default();
    for _ in 0..steps {
        if rng.random::<f64>() < mcfg.replace_weight {
            let s = propose_subtree_replace(state, obs, cfg, mcfg, rng)?;
            stats.replace_proposed += 1;
            stats.replace_accepted += s.accepted as u64;
        } else {
            let s = propose_detach_attach(state, obs, cfg, mcfg, rng)?;
            stats.detach_attach_proposed += 1;
            stats.detach_attach_accepted += s.accepted as u64;
        }
        let s = hmc_params(state, obs, cfg, mcfg, rng)?;
        stats.hmc_proposed += 1;
        stats.hmc_accepted += s.accepted as u64;
    }
    Ok(stats)
}

/// A structural transition between two endpoints, with the log-probabilities
/// of the discrete choices made by the forward and reverse proposals.
pub(crate) struct Transition<'a> {
    pub source: Endpoint<'a>,
    pub dest: Endpoint<'a>,
    pub log_struct_fwd: f64,
    pub log_struct_rev: f64,
}

/// Everything needed to commit an evaluated transition.
pub(crate) struct Evaluated {
    pub log_ratio: f64,
    pub proposed: ModelState,
}

/// Log acceptance ratio of `transition` with auxiliary `aux` and proposed
/// noise `noise_new`. `forward` may carry precomputed forward weights.
pub(crate) fn evaluate(
    state: &mut ModelState,
    tr: &Transition<'_>,
    aux: &AuxParams,
    noise_new: f64,
    delta: f64,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    forward: Option<Weighted>,
) -> Result<Evaluated> {
    aux.check()?;
    let noise = state.noise;
    let (shared, own_d) = tr.source.split()?;
    let current: Vec<f64> = shared.iter().chain(&own_d).copied().collect();
    let (dom_s, dom_f) = tr.dest.domains()?;
    let (_, dom_d) = tr.source.domains()?;
    if aux.forward.iter().any(|v| v.len() != dom_s.len() + dom_f.len())
        || aux.reverse.iter().any(|v| v.len() != dom_s.len() + dom_d.len())
    {
        return Err(Error::Contract("auxiliary vector length does not match the edit".into()));
    }
    let ut = aux.selected;
    let fwd = match forward {
        Some(w) => w,
        None => multitry::weigh(&tr.dest, &aux.forward, &shared, noise, delta, obs, cfg, Some(ut))?,
    };
    let chosen = &aux.forward[ut];
    let new_expr = tr.dest.build(chosen)?;
    let Some(fit_f) = fwd.fits[ut].as_ref() else {
        return Ok(Evaluated {
            log_ratio: f64::NEG_INFINITY,
            proposed: ModelState::new(new_expr, noise_new),
        });
    };
    let mu_f = multitry::mean_of(&new_expr, obs, fit_f);
    let (shape, scale_f) = gibbs_noise_params(obs.values, &mu_f);

    let center_rev = &chosen[..dom_s.len()];
    let mut rev_sets = aux.reverse.clone();
    rev_sets.insert(aux.reverse_selected, current.clone());
    let rev = multitry::weigh(
        &tr.source,
        &rev_sets,
        center_rev,
        noise_new,
        delta,
        obs,
        cfg,
        Some(aux.reverse_selected),
    )?;
    let Some(fit_r) = rev.fits[aux.reverse_selected].as_ref() else {
        return Ok(Evaluated {
            log_ratio: f64::NEG_INFINITY,
            proposed: ModelState::new(new_expr, noise_new),
        });
    };
    let mu_r = multitry::mean_of(&state.expr, obs, fit_r);
    let (_, scale_r) = gibbs_noise_params(obs.values, &mu_r);

    let proposed_fit = match crate::gp::Fit::new(&new_expr, noise_new, obs) {
        Ok(f) => f,
        Err(Error::Numerical { .. }) => {
            return Ok(Evaluated {
                log_ratio: f64::NEG_INFINITY,
                proposed: ModelState::new(new_expr, noise_new),
            })
        }
        Err(e) => return Err(e),
    };
    let lt_new = multitry::log_target(&new_expr, noise_new, &proposed_fit, cfg)?;
    let lt_cur = {
        let expr = state.expr.clone();
        let fit = state.fit(obs)?;
        multitry::log_target(&expr, noise, fit, cfg)?
    };

    let lq_f = multitry::log_q(chosen, &shared, &dom_s, &dom_f, delta);
    let lq_r = multitry::log_q(&current, center_rev, &dom_s, &dom_d, delta);
    let log_ratio = lt_new - lt_cur + tr.log_struct_rev - tr.log_struct_fwd + lq_r - lq_f
        + multitry::log_selection(&rev.log_w, aux.reverse_selected)
        - multitry::log_selection(&fwd.log_w, ut)
        + prior::log_inverse_gamma(noise, shape, scale_r)
        - prior::log_inverse_gamma(noise_new, shape, scale_f);
    Ok(Evaluated {
        log_ratio: if log_ratio.is_nan() {
            f64::NEG_INFINITY
        } else {
            log_ratio
        },
        proposed: ModelState::with_fit(new_expr, noise_new, proposed_fit),
    })
}

/// Draws the auxiliary variables of a transition and evaluates it.
pub(crate) fn propose<R: Rng + ?Sized>(
    state: &mut ModelState,
    tr: &Transition<'_>,
    count: usize,
    delta: f64,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    rng: &mut R,
) -> Result<Option<(AuxParams, f64, Evaluated)>> {
    let (shared, _) = tr.source.split()?;
    let (dom_s, dom_f) = tr.dest.domains()?;
    let (_, dom_d) = tr.source.domains()?;
    let forward: Vec<Vec<f64>> = (0..count)
        .map(|_| multitry::draw(&shared, &dom_s, &dom_f, delta, rng))
        .collect();
    let weighted = multitry::weigh(&tr.dest, &forward, &shared, state.noise, delta, obs, cfg, None)?;
    let Some(selected) = multitry::select(&weighted.log_w, rng) else {
        return Ok(None);
    };
    let chosen_expr = tr.dest.build(&forward[selected])?;
    let fit = weighted.fits[selected].as_ref().expect("selected candidate has a fit");
    let mu = multitry::mean_of(&chosen_expr, obs, fit);
    let draw = crate::gp::gibbs_noise(obs.values, &mu, rng);
    let center = forward[selected][..dom_s.len()].to_vec();
    let reverse: Vec<Vec<f64>> = (1..count)
        .map(|_| multitry::draw(&center, &dom_s, &dom_d, delta, rng))
        .collect();
    let reverse_selected = rng.random_range(0..count);
    let aux = AuxParams {
        forward,
        selected,
        reverse,
        reverse_selected,
    };
    let ev = evaluate(state, tr, &aux, draw.noise, delta, obs, cfg, Some(weighted))?;
    Ok(Some((aux, draw.noise, ev)))
}

/// Applies the MH decision for an evaluated proposal.
pub(crate) fn decide<R: Rng + ?Sized>(
    state: &mut ModelState,
    ev: Evaluated,
    rng: &mut R,
) -> Step {
    let u: f64 = rng.random();
    let accepted = u.ln() < ev.log_ratio;
    if accepted {
        *state = ev.proposed;
    }
    Step {
        accepted,
        log_ratio: ev.log_ratio,
    }
}

/// Numerical failures reject the move; other errors propagate.
pub(crate) fn absorb_numerical(r: Result<Step>, kind: &str) -> Result<Step> {
    match r {
        Err(Error::Numerical { kernel }) => {
            warn!("{kind} rejected after numerical failure on {kernel}");
            Ok(Step::rejected())
        }
        other => other,
    }
}
