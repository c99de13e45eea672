//! Sequential Monte Carlo over growing data prefixes: reweight, resample when
//! the effective sample size drops, then rejuvenate every particle.
//!
//! Weights are kept unnormalized in log space. Resampling resets every weight
//! to the mean weight, so `log_sum_exp(w) - ln M` is always the running
//! estimate of the log marginal likelihood.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{self, Fit, ModelState, Observations};
use crate::kernel::KernelExpr;
use crate::moves::{self, MoveConfig, MoveStats};
use crate::prior::{log_sum_exp, PcfgConfig};

/// Deterministic random stream for `(seed, key, step)`.
pub fn rng_stream(seed: u64, key: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix(key ^ splitmix(step)));
    rng
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

const RESAMPLE_KEY: u64 = u64::MAX;

/// How the data are revealed across SMC steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `ceil(fraction * n)` new points per step.
    Linear { fraction: f64 },
    /// Prefix sizes 2, 4, 8, ..., n.
    Logarithmic,
    /// All data in one step.
    Single,
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::Linear { fraction: 0.05 }
    }
}

/// Cumulative prefix sizes `n_1 < n_2 < ... < n_T = n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub prefix_sizes: Vec<usize>,
}

impl AnnealSchedule {
    pub fn len(&self) -> usize {
        self.prefix_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix_sizes.is_empty()
    }

    /// Sizes of the individual batches.
    pub fn batch_sizes(&self) -> Vec<usize> {
        let mut prev = 0;
        self.prefix_sizes
            .iter()
            .map(|n| {
                let b = n - prev;
                prev = *n;
                b
            })
            .collect()
    }
}

pub fn make_schedule(n: usize, kind: ScheduleKind) -> Result<AnnealSchedule> {
    if n == 0 {
        return Ok(AnnealSchedule {
            prefix_sizes: Vec::new(),
        });
    }
    let prefix_sizes = match kind {
        ScheduleKind::Linear { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "schedule fraction must lie in (0, 1], got {fraction}"
                )));
            }
            let step = ((fraction * n as f64).ceil() as usize).max(1);
            (1..)
                .map(|k| (k * step).min(n))
                .take(n.div_ceil(step))
                .collect()
        }
        ScheduleKind::Logarithmic => {
            let mut sizes = Vec::new();
            let mut m = 2usize;
            while m < n {
                sizes.push(m);
                m *= 2;
            }
            sizes.push(n);
            sizes
        }
        ScheduleKind::Single => vec![n],
    };
    Ok(AnnealSchedule { prefix_sizes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub particles: usize,
    pub rejuvenation_steps: usize,
    pub schedule: ScheduleKind,
    /// Resample when the normalized ESS falls below this value.
    pub ess_threshold: f64,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 48,
            rejuvenation_steps: 100,
            schedule: ScheduleKind::default(),
            ess_threshold: 0.5,
            seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("particles must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ess_threshold) {
            return Err(Error::Config(format!(
                "ess_threshold must lie in [0, 1], got {}",
                self.ess_threshold
            )));
        }
        make_schedule(1, self.schedule).map(|_| ())
    }
}

/// A model that SMC can propagate.
pub trait SmcModel: Sync {
    type Particle: Clone + Send + Sync;

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Self::Particle;

    /// Log-likelihood of the particle's hypothesis on `obs`.
    fn log_likelihood(&self, particle: &mut Self::Particle, obs: Observations<'_>) -> Result<f64>;

    /// Applies `steps` iterations of an MCMC kernel that leaves the posterior
    /// given `obs` invariant.
    fn rejuvenate(
        &self,
        particle: &mut Self::Particle,
        obs: Observations<'_>,
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<MoveStats>;
}

/// The full model over kernel structures, parameters, and noise.
#[derive(Clone, Debug, Default)]
pub struct GpModel {
    pub pcfg: PcfgConfig,
    pub moves: MoveConfig,
}

impl SmcModel for GpModel {
    type Particle = ModelState;

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> ModelState {
        ModelState::sample_prior(&self.pcfg, rng)
    }

    fn log_likelihood(&self, particle: &mut ModelState, obs: Observations<'_>) -> Result<f64> {
        particle.log_likelihood(obs)
    }

    fn rejuvenate(
        &self,
        particle: &mut ModelState,
        obs: Observations<'_>,
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<MoveStats> {
        moves::rejuvenate(particle, obs, &self.pcfg, &self.moves, steps, rng)
    }
}

/// A finite family of fully specified hypotheses with prior probabilities.
/// Rejuvenation is an independence sampler that proposes from the prior.
#[derive(Clone, Debug)]
pub struct PinnedFamily {
    pub members: Vec<ModelState>,
    pub prior: Vec<f64>,
}

impl PinnedFamily {
    pub fn new(members: Vec<ModelState>, prior: Vec<f64>) -> Result<Self> {
        let total: f64 = prior.iter().sum();
        if members.is_empty()
            || members.len() != prior.len()
            || prior.iter().any(|p| !(*p > 0.0))
            || (total - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidArgument(
                "pinned family needs one positive prior probability per member, summing to 1".into(),
            ));
        }
        Ok(PinnedFamily { members, prior })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let mut u: f64 = rng.random();
        for (i, p) in self.prior.iter().enumerate() {
            if u < *p {
                return i;
            }
            u -= p;
        }
        self.prior.len() - 1
    }

    fn member_log_likelihood(&self, i: usize, obs: Observations<'_>) -> Result<f64> {
        let m = &self.members[i];
        Ok(Fit::new(&m.expr, m.noise, obs)?.log_likelihood())
    }

    /// Exact posterior probabilities of the members given `obs`.
    pub fn posterior(&self, obs: Observations<'_>) -> Result<Vec<f64>> {
        let lj: Vec<f64> = (0..self.members.len())
            .map(|i| Ok(self.prior[i].ln() + self.member_log_likelihood(i, obs)?))
            .collect::<Result<_>>()?;
        let z = log_sum_exp(&lj);
        Ok(lj.iter().map(|l| (l - z).exp()).collect())
    }

    /// Exact log marginal likelihood of `obs` under the family.
    pub fn log_marginal(&self, obs: Observations<'_>) -> Result<f64> {
        let lj: Vec<f64> = (0..self.members.len())
            .map(|i| Ok(self.prior[i].ln() + self.member_log_likelihood(i, obs)?))
            .collect::<Result<_>>()?;
        Ok(log_sum_exp(&lj))
    }
}

impl SmcModel for PinnedFamily {
    type Particle = usize;

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> usize {
        self.draw(rng)
    }

    fn log_likelihood(&self, particle: &mut usize, obs: Observations<'_>) -> Result<f64> {
        self.member_log_likelihood(*particle, obs)
    }

    fn rejuvenate(
        &self,
        particle: &mut usize,
        obs: Observations<'_>,
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<MoveStats> {
        let mut stats = MoveStats::default();
        if steps == 0 {
            return Ok(stats);
        }
        let ll: Vec<f64> = (0..self.members.len())
            .map(|i| self.member_log_likelihood(i, obs))
            .collect::<Result<_>>()?;
        for _ in 0..steps {
            let proposal = self.draw(rng);
            let u: f64 = rng.random();
            stats.replace_proposed += 1;
            if u.ln() < ll[proposal] - ll[*particle] {
                *particle = proposal;
                stats.replace_accepted += 1;
            }
        }
        Ok(stats)
    }
}

/// Weighted particles approximating the current posterior.
#[derive(Clone, Debug)]
pub struct ParticleCollection<P> {
    pub particles: Vec<P>,
    pub log_weights: Vec<f64>,
    /// Log marginal-likelihood increment contributed by each completed step.
    pub increments: Vec<f64>,
    /// Number of completed steps.
    pub step: usize,
}

impl<P> ParticleCollection<P> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Running estimate of the log marginal likelihood.
    pub fn log_marginal(&self) -> f64 {
        log_marginal(&self.log_weights)
    }

    /// Self-normalized weights.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalized_weights(&self.log_weights)
    }
}

/// Log of the mean unnormalized weight.
pub fn log_marginal(log_weights: &[f64]) -> f64 {
    if log_weights.is_empty() {
        return 0.0;
    }
    log_sum_exp(log_weights) - (log_weights.len() as f64).ln()
}

pub fn normalized_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let total = log_sum_exp(log_weights);
    if !total.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(log_weights.iter().map(|w| (w - total).exp()).collect())
}

/// Normalized effective sample size `(sum w)^2 / (M sum w^2)`.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for w in log_weights {
        let e = (w - m).exp();
        s1 += e;
        s2 += e * e;
    }
    Ok(s1 * s1 / (log_weights.len() as f64 * s2))
}

/// Systematic resampling with offset `u` in `[0, 1)`; returns ancestor indices.
pub fn systematic_resample(log_weights: &[f64], u: f64) -> Result<Vec<usize>> {
    let w = normalized_weights(log_weights)?;
    let m = w.len();
    let mut out = Vec::with_capacity(m);
    let mut cum = w[0];
    let mut i = 0;
    for k in 0..m {
        let point = (k as f64 + u) / m as f64;
        while point >= cum && i + 1 < m {
            i += 1;
            cum += w[i];
        }
        out.push(i);
    }
    Ok(out)
}

/// Resamples when the ESS is below `threshold` and this is not the last step.
pub fn maybe_resample<P: Clone>(
    pc: &mut ParticleCollection<P>,
    threshold: f64,
    is_last: bool,
    rng: &mut ChaCha8Rng,
) -> Result<bool> {
    if is_last || ess(&pc.log_weights)? >= threshold {
        return Ok(false);
    }
    let mean = log_marginal(&pc.log_weights);
    let ancestors = systematic_resample(&pc.log_weights, rng.random())?;
    pc.particles = ancestors.iter().map(|a| pc.particles[*a].clone()).collect();
    pc.log_weights = vec![mean; pc.particles.len()];
    Ok(true)
}

/// Per-step record of an SMC run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub n_obs: usize,
    pub ess: f64,
    pub resampled: bool,
    pub log_marginal: f64,
    pub structure_acceptance: f64,
    pub hmc_acceptance: f64,
    /// Cholesky flops spent in rejuvenation during this step.
    pub rejuvenation_flops: u64,
    pub stats: MoveStats,
}

#[derive(Clone, Debug)]
pub struct SmcOutput<P> {
    pub collection: ParticleCollection<P>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl<P> SmcOutput<P> {
    pub fn rejuvenation_flops(&self) -> u64 {
        self.diagnostics.iter().map(|d| d.rejuvenation_flops).sum()
    }
}

/// Runs SMC over prefixes of `obs`.
pub fn run_smc<M: SmcModel>(
    model: &M,
    obs: Observations<'_>,
    cfg: &SmcConfig,
) -> Result<SmcOutput<M::Particle>> {
    cfg.validate()?;
    let schedule = make_schedule(obs.len(), cfg.schedule)?;
    let mut particles: Vec<M::Particle> = (0..cfg.particles)
        .into_par_iter()
        .map(|i| model.sample_prior(&mut rng_stream(cfg.seed, i as u64, 0)))
        .collect();
    let mut pc_weights = vec![0.0; cfg.particles];
    let mut loglik = vec![0.0; cfg.particles];
    let mut increments = Vec::with_capacity(schedule.len());
    let mut diagnostics = Vec::with_capacity(schedule.len());
    let t_total = schedule.len();

    for (j, &n_j) in schedule.prefix_sizes.iter().enumerate() {
        let step = j + 1;
        let prefix = obs.prefix(n_j);
        let before = log_marginal(&pc_weights);

        let new_ll: Vec<f64> = particles
            .par_iter_mut()
            .zip(pc_weights.par_iter())
            .map(|(p, w)| {
                if *w == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                match model.log_likelihood(p, prefix) {
                    Ok(v) => v,
                    Err(Error::Numerical { kernel }) => {
                        warn!("particle weight set to zero after numerical failure on {kernel}");
                        f64::NEG_INFINITY
                    }
                    Err(e) => {
                        warn!("particle weight set to zero: {e}");
                        f64::NEG_INFINITY
                    }
                }
            })
            .collect();
        for i in 0..cfg.particles {
            pc_weights[i] = if new_ll[i].is_finite() {
                pc_weights[i] + new_ll[i] - loglik[i]
            } else {
                f64::NEG_INFINITY
            };
            loglik[i] = new_ll[i];
        }
        let ess_j = ess(&pc_weights)?;
        let mut pc = ParticleCollection {
            particles,
            log_weights: pc_weights,
            increments: Vec::new(),
            step,
        };
        let mut rng = rng_stream(cfg.seed, RESAMPLE_KEY, step as u64);
        let resampled = maybe_resample(&mut pc, cfg.ess_threshold, step == t_total, &mut rng)?;
        particles = pc.particles;
        pc_weights = pc.log_weights;

        let results: Vec<Result<(MoveStats, u64, f64)>> = particles
            .par_iter_mut()
            .zip(pc_weights.par_iter())
            .enumerate()
            .map(|(i, (p, w))| {
                if *w == f64::NEG_INFINITY {
                    return Ok((MoveStats::default(), 0, f64::NEG_INFINITY));
                }
                let mut rng = rng_stream(cfg.seed, i as u64, step as u64);
                let start = gp::cholesky_flops();
                let stats = model.rejuvenate(p, prefix, cfg.rejuvenation_steps, &mut rng)?;
                let flops = gp::cholesky_flops() - start;
                let ll = model.log_likelihood(p, prefix)?;
                Ok((stats, flops, ll))
            })
            .collect();
        let mut stats = MoveStats::default();
        let mut flops = 0;
        for (i, r) in results.into_iter().enumerate() {
            let (s, f, ll) = r?;
            stats += s;
            flops += f;
            loglik[i] = ll;
        }
        let after = log_marginal(&pc_weights);
        increments.push(after - before);
        diagnostics.push(StepDiagnostics {
            step,
            n_obs: n_j,
            ess: ess_j,
            resampled,
            log_marginal: after,
            structure_acceptance: stats.structure_acceptance(),
            hmc_acceptance: stats.hmc_acceptance(),
            rejuvenation_flops: flops,
            stats,
        });
    }
    Ok(SmcOutput {
        collection: ParticleCollection {
            particles,
            log_weights: pc_weights,
            increments,
            step: t_total,
        },
        diagnostics,
    })
}

/// Convenience constructor for a pinned family with a uniform prior.
pub fn uniform_family(members: Vec<(KernelExpr, f64)>) -> Result<PinnedFamily> {
    let m = members.len();
    PinnedFamily::new(
        members.into_iter().map(|(e, n)| ModelState::new(e, n)).collect(),
        vec![1.0 / m as f64; m],
    )
}
