//! Detach-Attach: collapse the subtree at `a` onto one of its strict
//! descendants, or grow a scaffold around the subtree at `a`.

use rand::Rng;

use super::multitry::{AuxParams, Endpoint};
use super::{absorb_numerical, decide, evaluate, propose, MoveConfig, Step, Transition};
use crate::error::{Error, Result};
use crate::gp::{ModelState, Observations};
use crate::kernel::{KernelExpr, Side, TreePath};
use crate::prior::{self, PcfgConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Detach,
    Attach,
}

/// Auxiliary variables of one Detach-Attach proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct DetachAttachTrace {
    pub direction: Direction,
    /// Node `a` whose subtree is edited.
    pub at: TreePath,
    /// Position `b` of the kept subtree, relative to `a`; never the root.
    pub hole: TreePath,
    /// For Attach: the scaffold around the hole. The hole holds a placeholder
    /// and the remaining parameters equal the own block of the selected candidate.
    pub scaffold: Option<KernelExpr>,
    pub aux: AuxParams,
    /// Proposed noise variance.
    pub noise: f64,
}

fn placeholder() -> KernelExpr {
    KernelExpr::linear([1.0, 1.0, 1.0])
}

fn contract(msg: &str) -> Error {
    Error::Contract(msg.into())
}

/// Log-probability of generating the scaffold structure around `hole` when
/// attaching at a node of depth `depth`.
fn log_scaffold_structure(
    scaffold: &KernelExpr,
    hole: &TreePath,
    depth: usize,
    cfg: &PcfgConfig,
    embed_prob: f64,
) -> Result<f64> {
    let levels = hole.len();
    if levels == 0 {
        return Err(contract("scaffold hole must be below the scaffold root"));
    }
    let mut lp = 0.0;
    let mut cur = scaffold;
    for (i, side) in hole.steps().iter().enumerate() {
        let KernelExpr::Node { op, children } = cur else {
            return Err(contract("scaffold hole path leaves the tree"));
        };
        let sibling = &children[1 - side.index()];
        lp += cfg.op_conditional_prob(op).ln()
            + 0.5f64.ln()
            + prior::log_structure_prior(sibling, depth + i + 1, cfg);
        lp += if i + 1 < levels {
            (1.0 - embed_prob).ln()
        } else {
            embed_prob.ln()
        };
        cur = &children[side.index()];
    }
    Ok(lp)
}

/// Draws a scaffold structure; its hole holds a placeholder.
fn sample_scaffold<R: Rng + ?Sized>(
    depth: usize,
    cfg: &PcfgConfig,
    embed_prob: f64,
    rng: &mut R,
) -> (KernelExpr, TreePath) {
    let mut levels = Vec::new();
    let mut d = depth;
    loop {
        let op = prior::sample_operator(cfg, rng);
        let side = if rng.random::<bool>() {
            Side::Left
        } else {
            Side::Right
        };
        let sibling = prior::sample_subtree(cfg, d + 1, rng);
        levels.push((op, side, sibling));
        d += 1;
        if rng.random::<f64>() < embed_prob {
            break;
        }
    }
    let hole = TreePath(levels.iter().map(|(_, s, _)| *s).collect());
    let mut cur = placeholder();
    for (op, side, sibling) in levels.into_iter().rev() {
        cur = match side {
            Side::Left => KernelExpr::node(op, cur, sibling),
            Side::Right => KernelExpr::node(op, sibling, cur),
        };
    }
    (cur, hole)
}

struct Plan {
    dest_expr: KernelExpr,
    log_struct_fwd: f64,
    log_struct_rev: f64,
}

fn plan(state: &ModelState, trace: &DetachAttachTrace, cfg: &PcfgConfig, mcfg: &MoveConfig) -> Result<Plan> {
    if trace.hole.is_empty() {
        return Err(contract("detach-attach hole must be a strict descendant"));
    }
    let k = &state.expr;
    let k_a = k.get(&trace.at)?;
    let depth = trace.at.len() + 1;
    let (ln_xi, ln_not_xi) = (mcfg.detach_prob.ln(), (1.0 - mcfg.detach_prob).ln());
    let ln_k = (k.node_count() as f64).ln();
    match trace.direction {
        Direction::Detach => {
            if trace.scaffold.is_some() {
                return Err(contract("detach trace carries a scaffold"));
            }
            let core = k_a.get(&trace.hole)?.clone();
            let scaffold = k_a.subtree_replace_at(&trace.hole, placeholder())?;
            let dest_expr = k.subtree_replace_at(&trace.at, core)?;
            Ok(Plan {
                log_struct_fwd: ln_xi - ln_k - ((k_a.node_count() - 1) as f64).ln(),
                log_struct_rev: ln_not_xi - (dest_expr.node_count() as f64).ln()
                    + log_scaffold_structure(&scaffold, &trace.hole, depth, cfg, mcfg.embed_prob)?,
                dest_expr,
            })
        }
        Direction::Attach => {
            let scaffold = trace
                .scaffold
                .as_ref()
                .ok_or_else(|| contract("attach trace lacks a scaffold"))?;
            scaffold.get(&trace.hole)?;
            let grown = scaffold.subtree_replace_at(&trace.hole, k_a.clone())?;
            let grown_count = grown.node_count();
            let dest_expr = k.subtree_replace_at(&trace.at, grown)?;
            Ok(Plan {
                log_struct_fwd: ln_not_xi - ln_k
                    + log_scaffold_structure(scaffold, &trace.hole, depth, cfg, mcfg.embed_prob)?,
                log_struct_rev: ln_xi - (dest_expr.node_count() as f64).ln()
                    - ((grown_count - 1) as f64).ln(),
                dest_expr,
            })
        }
    }
}

fn endpoints<'a>(
    state: &'a ModelState,
    dest_expr: &'a KernelExpr,
    trace: &'a DetachAttachTrace,
    root: &'a TreePath,
) -> (Endpoint<'a>, Endpoint<'a>) {
    let (src_core, dst_core) = match trace.direction {
        Direction::Detach => (&trace.hole, root),
        Direction::Attach => (root, &trace.hole),
    };
    (
        Endpoint {
            expr: &state.expr,
            path: &trace.at,
            core: Some(src_core),
        },
        Endpoint {
            expr: dest_expr,
            path: &trace.at,
            core: Some(dst_core),
        },
    )
}

fn check_own_block(trace: &DetachAttachTrace, dest: &Endpoint<'_>) -> Result<()> {
    trace.aux.check()?;
    let (shared, _) = dest.domains()?;
    let chosen = &trace.aux.forward[trace.aux.selected];
    let own = chosen.get(shared.len()..).unwrap_or(&[]);
    let expected = match &trace.scaffold {
        None => Vec::new(),
        Some(s) => s.params_outside(&trace.hole)?,
    };
    if own != expected.as_slice() {
        return Err(contract("trace scaffold parameters differ from the selected candidate"));
    }
    Ok(())
}

/// The Detach and Attach maps, which invert one another.
pub fn involution_detach_attach(
    state: &ModelState,
    trace: &DetachAttachTrace,
) -> Result<(ModelState, DetachAttachTrace)> {
    let p = plan(state, trace, &PcfgConfig::default(), &MoveConfig::default())?;
    let root = TreePath::root();
    let (source, dest) = endpoints(state, &p.dest_expr, trace, &root);
    check_own_block(trace, &dest)?;
    let (shared, own) = source.split()?;
    let current: Vec<f64> = shared.into_iter().chain(own).collect();
    let (aux, chosen) = trace.aux.swap(current)?;
    let new_expr = dest.build(&chosen)?;
    let (direction, scaffold) = match trace.direction {
        Direction::Detach => {
            let k_a = state.expr.get(&trace.at)?;
            (
                Direction::Attach,
                Some(k_a.subtree_replace_at(&trace.hole, placeholder())?),
            )
        }
        Direction::Attach => (Direction::Detach, None),
    };
    let out = DetachAttachTrace {
        direction,
        at: trace.at.clone(),
        hole: trace.hole.clone(),
        scaffold,
        aux,
        noise: state.noise,
    };
    Ok((ModelState::new(new_expr, trace.noise), out))
}

fn spread(mcfg: &MoveConfig, d_from: usize, d_to: usize) -> (usize, f64) {
    if mcfg.detach_attach_multi_try {
        (mcfg.try_count.resolve(d_from, d_to), mcfg.walk_variance)
    } else {
        (1, 0.0)
    }
}

/// Log acceptance ratio of applying `trace` to `state`.
pub fn detach_attach_log_ratio(
    state: &mut ModelState,
    trace: &DetachAttachTrace,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
) -> Result<f64> {
    let p = plan(state, trace, cfg, mcfg)?;
    let snapshot = state.clone();
    let root = TreePath::root();
    let (source, dest) = endpoints(&snapshot, &p.dest_expr, trace, &root);
    check_own_block(trace, &dest)?;
    let (_, delta) = spread(mcfg, 0, 0);
    let tr = Transition {
        source,
        dest,
        log_struct_fwd: p.log_struct_fwd,
        log_struct_rev: p.log_struct_rev,
    };
    Ok(evaluate(state, &tr, &trace.aux, trace.noise, delta, obs, cfg, None)?.log_ratio)
}

/// Draws the direction and paths; `None` for an inapplicable Detach.
fn draw_edit<R: Rng + ?Sized>(
    state: &ModelState,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
    direction: Option<Direction>,
    rng: &mut R,
) -> Result<Option<DetachAttachTrace>> {
    let direction = direction.unwrap_or_else(|| {
        if rng.random::<f64>() < mcfg.detach_prob {
            Direction::Detach
        } else {
            Direction::Attach
        }
    });
    let paths = state.expr.node_paths();
    let at = paths[rng.random_range(0..paths.len())].clone();
    let k_a = state.expr.get(&at)?;
    let empty_aux = AuxParams {
        forward: vec![Vec::new()],
        selected: 0,
        reverse: Vec::new(),
        reverse_selected: 0,
    };
    match direction {
        Direction::Detach => {
            if k_a.is_base() {
                return Ok(None);
            }
            let inner = k_a.node_paths();
            let hole = inner[rng.random_range(1..inner.len())].clone();
            Ok(Some(DetachAttachTrace {
                direction,
                at,
                hole,
                scaffold: None,
                aux: empty_aux,
                noise: state.noise,
            }))
        }
        Direction::Attach => {
            let (scaffold, hole) = sample_scaffold(at.len() + 1, cfg, mcfg.embed_prob, rng);
            Ok(Some(DetachAttachTrace {
                direction,
                at,
                hole,
                scaffold: Some(scaffold),
                aux: empty_aux,
                noise: state.noise,
            }))
        }
    }
}

/// Draws a complete trace (optionally forcing the direction) and its log
/// acceptance ratio, without deciding acceptance. `None` when the drawn
/// direction is inapplicable or every candidate fails.
pub fn sample_detach_attach_trace<R: Rng + ?Sized>(
    state: &mut ModelState,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
    direction: Option<Direction>,
    rng: &mut R,
) -> Result<Option<(DetachAttachTrace, f64)>> {
    let Some(mut trace) = draw_edit(state, cfg, mcfg, direction, rng)? else {
        return Ok(None);
    };
    let p = plan(state, &trace, cfg, mcfg)?;
    let snapshot = state.clone();
    let root = TreePath::root();
    let (source, dest) = endpoints(&snapshot, &p.dest_expr, &trace, &root);
    let (count, delta) = spread(mcfg, state.expr.param_count(), p.dest_expr.param_count());
    let tr = Transition {
        source,
        dest,
        log_struct_fwd: p.log_struct_fwd,
        log_struct_rev: p.log_struct_rev,
    };
    let Some((aux, noise, ev)) = propose(state, &tr, count, delta, obs, cfg, rng)? else {
        return Ok(None);
    };
    let n_shared = tr.dest.domains()?.0.len();
    if let Some(s) = &trace.scaffold {
        let own = &aux.forward[aux.selected][n_shared..];
        trace.scaffold = Some(s.with_params_outside(&trace.hole, own)?);
    }
    trace.aux = aux;
    trace.noise = noise;
    Ok(Some((trace, ev.log_ratio)))
}

/// One Detach-Attach Metropolis-Hastings step.
pub fn propose_detach_attach<R: Rng + ?Sized>(
    state: &mut ModelState,
    obs: Observations<'_>,
    cfg: &PcfgConfig,
    mcfg: &MoveConfig,
    rng: &mut R,
) -> Result<Step> {
    let r = (|| {
        let Some(trace) = draw_edit(state, cfg, mcfg, None, rng)? else {
            return Ok(Step::rejected());
        };
        let p = plan(state, &trace, cfg, mcfg)?;
        let snapshot = state.clone();
        let root = TreePath::root();
        let (source, dest) = endpoints(&snapshot, &p.dest_expr, &trace, &root);
        let (count, delta) = spread(mcfg, state.expr.param_count(), p.dest_expr.param_count());
        let tr = Transition {
            source,
            dest,
            log_struct_fwd: p.log_struct_fwd,
            log_struct_rev: p.log_struct_rev,
        };
        match propose(state, &tr, count, delta, obs, cfg, rng)? {
            None => Ok(Step::rejected()),
            Some((_, _, ev)) => Ok(decide(state, ev, rng)),
        }
    })();
    absorb_numerical(r, "detach-attach")
}
