//! Hamiltonian Monte Carlo over the unconstrained kernel parameters and
//! log noise variance, with the structure held fixed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{absorb_numerical, MoveConfig, Step};
use crate::error::{Error, Result};
use crate::gp::{self, Fit, ModelState, Observations};
use crate::kernel::{KernelExpr, ParamDomain};
use crate::prior::{PcfgConfig, EXPONENT_Z_LIMIT};

struct Point {
    z: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    fit: Fit,
}

fn evaluate(expr: &KernelExpr, z: Vec<f64>, obs: Observations<'_>) -> Result<Option<Point>> {
    let domains = expr.param_domains();
    let escaped = z
        .iter()
        .zip(&domains)
        .any(|(zi, d)| *d == ParamDomain::Exponent && zi.abs() > EXPONENT_Z_LIMIT);
    if escaped || z.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    match gp::value_and_grad_unconstrained(expr, &z, obs) {
        Ok((value, grad, fit)) if value.is_finite() && grad.iter().all(|g| g.is_finite()) => {
            Ok(Some(Point { z, value, grad, fit }))
        }
        Ok(_) | Err(Error::Numerical { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// Integrates `steps` leapfrog steps; `None` if the trajectory diverges.
fn leapfrog(
    expr: &KernelExpr,
    start: Point,
    p: &mut [f64],
    eps: f64,
    steps: usize,
    obs: Observations<'_>,
) -> Result<Option<Point>> {
    let mut cur = start;
    for _ in 0..steps {
        for (pi, g) in p.iter_mut().zip(&cur.grad) {
            *pi += 0.5 * eps * g;
        }
        let z: Vec<f64> = cur.z.iter().zip(p.iter()).map(|(z, pi)| z + eps * pi).collect();
        let Some(next) = evaluate(expr, z, obs)? else {
            return Ok(None);
        };
        cur = next;
        for (pi, g) in p.iter_mut().zip(&cur.grad) {
            *pi += 0.5 * eps * g;
        }
    }
    Ok(Some(cur))
}

/// Change in the Hamiltonian after integrating from `(z, p)`; `None` on divergence.
pub fn leapfrog_energy_error(
    expr: &KernelExpr,
    z: &[f64],
    p: &[f64],
    eps: f64,
    steps: usize,
    obs: Observations<'_>,
) -> Result<Option<f64>> {
    let Some(start) = evaluate(expr, z.to_vec(), obs)? else {
        return Ok(None);
    };
    let h0 = -start.value + kinetic(p);
    let mut mom = p.to_vec();
    Ok(leapfrog(expr, start, &mut mom, eps, steps, obs)?.map(|end| -end.value + kinetic(&mom) - h0))
}

/// One HMC transition with identity mass matrix.
pub fn hmc_params<R: Rng + ?Sized>(
    state: &mut ModelState,
    obs: Observations<'_>,
    _cfg: &PcfgConfig,
    mcfg: &MoveConfig,
    rng: &mut R,
) -> Result<Step> {
    let r = (|| {
        let z0 = gp::to_unconstrained(&state.expr, state.noise);
        let mut p: Vec<f64> = (0..z0.len()).map(|_| StandardNormal.sample(rng)).collect();
        let u: f64 = rng.random();
        if mcfg.hmc_steps == 0 {
            return Ok(Step {
                accepted: true,
                log_ratio: 0.0,
            });
        }
        let Some(start) = evaluate(&state.expr, z0, obs)? else {
            return Ok(Step::rejected());
        };
        let h0 = -start.value + kinetic(&p);
        let Some(end) = leapfrog(&state.expr, start, &mut p, mcfg.hmc_step_size, mcfg.hmc_steps, obs)?
        else {
            return Ok(Step::rejected());
        };
        let log_ratio = h0 - (-end.value + kinetic(&p));
        if !log_ratio.is_finite() || u.ln() >= log_ratio {
            return Ok(Step {
                accepted: false,
                log_ratio,
            });
        }
        let (expr, noise) = gp::from_unconstrained(&state.expr, &end.z)?;
        *state = ModelState::with_fit(expr, noise, end.fit);
        Ok(Step {
            accepted: true,
            log_ratio,
        })
    })();
    absorb_numerical(r, "hmc")
}
