//! Subtree-Replace: resample the subtree at a uniformly chosen node from the
//! conditional prior, with multi-try parameter proposals and a Gibbs-style
//! noise proposal.

use rand::Rng;

use super::multitry::{AuxParams, Endpoint};
use super::{absorb_numerical, decide, evaluate, propose, MoveConfig, Step, Transition};
use crate::error::{Error, Result};
use crate::gp::{ModelState, Observations};
use crate::kernel::{KernelExpr, TreePath};
use crate::prior::{self, PcfgConfig};

/// Auxiliary variables of one Subtree-Replace proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplaceTrace {
    /// Node whose subtree is replaced.
    pub path: TreePath,
    /// Incoming subtree; its parameters equal the own block of the selected candidate.
    pub subtree: KernelExpr,
    pub aux: AuxParams,
    /// Proposed noise variance.
    pub noise: f64,
}

fn check_subtree(trace: &ReplaceTrace, n_shared: usize) -> Result<()> {
    trace.aux.check()?;
    let chosen = &trace.aux.forward[trace.aux.selected];
    let own = chosen.get(n_shared..).unwrap_or(&[]);
    if trace.subtree.params().as_slice() != own {
        return Err(Error::Contract(
            "trace subtree parameters differ from the selected candidate".into(),
        ));
    }
    Ok(())
}

/// The extended-space involution: swaps the current and proposed states and
/// mirrors the auxiliary variables.
pub fn involution_subtree_replace(
    state: &ModelState,
    trace: &ReplaceTrace,
) -> Result<(ModelState, ReplaceTrace)> {
    let source = Endpoint {
        expr: &state.expr,
        path: &trace.path,
        core: None,
    };
    let (shared, own) = source.split()?;
    check_subtree(trace, shared.len())?;
    let dest_expr = state.expr.subtree_replace_at(&trace.path, trace.subtree.clone())?;
    let dest = Endpoint {
        expr: &dest_expr,
        path: &trace.path,
        core: None,
    };
    let current: Vec<f64> = shared.into_iter().chain(own).collect();
    let (aux, chosen) = trace.aux.swap(current)?;
    let new_expr = dest.build(&chosen)?;
    let out_trace = ReplaceTrace {
        path: trace.path.clone(),
        subtree: state.expr.subtree_extract(&trace.path)?,
        aux,
        noise: state.noise,
    };
    Ok((ModelState::new(new_expr, trace.noise), out_trace))
}

fn transition<'a>(
    state: &'a ModelState,
    dest_expr: &'a KernelExpr,
    trace_path: &'a TreePath,
    subtree: &KernelExpr,
    cfg: &PcfgConfig,
) -> Result<Transition<'a>> {
    let depth = trace_path.len() + 1;
    let old = state.expr.get(trace_path)?;
    Ok(Transition {
        source: Endpoint {
            expr: &state.expr,
            path: trace_path,
            core: None,
        },
        dest: Endpoint {
            expr: dest_expr,
            path: trace_path,
            core: None,
        },
        log_struct_fwd: -(state.expr.node_count() as f64).ln()
            + prior::log_structure_prior(subtree, depth, cfg),
        log_struct_rev: -(dest_expr.node_count() as f64).ln()
            + prior::log_structure_prior(old, depth, cfg),
    })
}

/// Log acceptance ratio of applying `trace` to `state`.
pub fn replace_log_ratio(
    state: &mut ModelState,
    trace: &ReplaceTrace,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
) -> Result<f64> {
    let n_shared = state.expr.params_outside(&trace.path)?.len();
    check_subtree(trace, n_shared)?;
    let dest_expr = state.expr.subtree_replace_at(&trace.path, trace.subtree.clone())?;
    let snapshot = state.clone();
    let tr = transition(&snapshot, &dest_expr, &trace.path, &trace.subtree, cfg)?;
    let ev = evaluate(state, &tr, &trace.aux, trace.noise, mcfg.walk_variance, obs, cfg, None)?;
    Ok(ev.log_ratio)
}

fn draw_structure<R: Rng + ?Sized>(
    state: &ModelState,
    cfg: &PcfgConfig,
    rng: &mut R,
) -> (TreePath, KernelExpr) {
    let paths = state.expr.node_paths();
    let path = paths[rng.random_range(0..paths.len())].clone();
    let subtree = prior::sample_subtree(cfg, path.len() + 1, rng);
    (path, subtree)
}

/// Draws a complete forward trace without deciding acceptance.
pub fn sample_replace_trace<R: Rng + ?Sized>(
    state: &mut ModelState,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
    rng: &mut R,
) -> Result<Option<(ReplaceTrace, f64)>> {
    let (path, subtree) = draw_structure(state, cfg, rng);
    sample_replace_trace_at(state, path, subtree, obs, cfg, mcfg, rng)
}

/// Like [`sample_replace_trace`] with the path and incoming structure fixed.
pub fn sample_replace_trace_at<R: Rng + ?Sized>(
    state: &mut ModelState,
    path: TreePath,
    subtree: KernelExpr,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
    rng: &mut R,
) -> Result<Option<(ReplaceTrace, f64)>> {
    let dest_expr = state.expr.subtree_replace_at(&path, subtree.clone())?;
    let count = mcfg
        .try_count
        .resolve(state.expr.param_count(), dest_expr.param_count());
    let snapshot = state.clone();
    let tr = transition(&snapshot, &dest_expr, &path, &subtree, cfg)?;
    let Some((aux, noise, ev)) =
        propose(state, &tr, count, mcfg.walk_variance, obs, cfg, rng)?
    else {
        return Ok(None);
    };
    let selected = &aux.forward[aux.selected];
    let n_shared = selected.len() - subtree.param_count();
    let subtree = subtree.with_params(&selected[n_shared..])?;
    Ok(Some((
        ReplaceTrace {
            path,
            subtree,
            aux,
            noise,
        },
        ev.log_ratio,
    )))
}

/// One Subtree-Replace Metropolis-Hastings step.
pub fn propose_subtree_replace<R: Rng + ?Sized>(
    state: &mut ModelState,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
    rng: &mut R,
) -> Result<Step> {
    let r = (|| {
        let (path, subtree) = draw_structure(state, cfg, rng);
        let dest_expr = state.expr.subtree_replace_at(&path, subtree.clone())?;
        let count = mcfg
            .try_count
            .resolve(state.expr.param_count(), dest_expr.param_count());
        let snapshot = state.clone();
        let tr = transition(&snapshot, &dest_expr, &path, &subtree, cfg)?;
        match propose(state, &tr, count, mcfg.walk_variance, obs, cfg, rng)? {
            None => Ok(Step::rejected()),
            Some((_, _, ev)) => Ok(decide(state, ev, rng)),
        }
    })();
    absorb_numerical(r, "subtree-replace")
}
