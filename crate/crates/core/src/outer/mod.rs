//! Parameter layer: a weighted cloud of parameter particles, each carrying
//! its own inner state filter, advanced by a sequential Monte Carlo or a
//! sequential quasi-Monte Carlo recursion.

mod jitter;
mod resample;
mod summary;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, NhfError, Result};
use crate::inner::{InnerFilter, StatePrior, StepOutcome};
use crate::qmc::{hilbert_sort, HaltonStream, HilbertMap, PsiConfig};
use crate::rng::{hash_f64s, stream, Purpose, StreamRng};
use crate::stats::{effective_sample_size, normalize_log_weights};

pub use jitter::{draw_prior, jitter, JitterKernel, JitterMode, PriorBox, PriorSource};
pub use resample::{multinomial_resample, sorted_uniform_resample};
pub use summary::{posterior_cov, posterior_mean, state_predictor, GaussianMixture, PosteriorSummary};

/// `N` parameter particles with weights and one inner belief each.
#[derive(Debug, Clone)]
pub struct ParameterCloud<B> {
    pub thetas: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub beliefs: Vec<B>,
    /// Index of the last assimilated observation.
    pub step: u64,
}

impl<B> ParameterCloud<B> {
    /// Uniformly weighted cloud at step 0.
    pub fn new(thetas: Vec<Vec<f64>>, beliefs: Vec<B>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(NhfError::invalid("parameter cloud needs at least one particle"));
        }
        check_len("beliefs", thetas.len(), beliefs.len())?;
        let n = thetas.len();
        Ok(Self {
            thetas,
            weights: vec![1.0 / n as f64; n],
            beliefs,
            step: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// How per-particle random streams are keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RngKeying {
    /// By `(seed, step, slot)`.
    #[default]
    Slot,
    /// By `(seed, step, hash of the particle's parameters and state mean,
    /// rank among particles with the same hash)`, so that results do not
    /// depend on particle order.
    ContentHash,
}

/// Settings shared by every step of the outer recursion.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub seed: u64,
    pub kernel: JitterKernel,
    pub prior: PriorBox,
    pub keying: RngKeying,
    /// Resample only when `ESS < threshold * N`; `None` resamples every step.
    pub ess_threshold: Option<f64>,
}

/// Everything a step reports besides the updated cloud.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub summary: PosteriorSummary,
    /// Jittered parameters before resampling.
    pub thetas: Vec<Vec<f64>>,
    /// Their normalized weights.
    pub weights: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
}

/// Low-discrepancy state carried across quasi-Monte Carlo steps.
#[derive(Debug, Clone)]
pub struct SqmcState {
    /// Global point stream of dimension `1 + kernel.uniforms_needed()`.
    pub halton: HaltonStream,
    pub hilbert: HilbertMap,
    pub psi: PsiConfig,
    /// Jitter uniforms carried by each slot into the next step.
    pub carried: Vec<Vec<f64>>,
}

impl SqmcState {
    /// Opens the global stream (skipping the all-zero point) and assigns the
    /// first block's jitter uniforms to the slots.
    pub fn new(n: usize, kernel: &JitterKernel, psi: PsiConfig) -> Result<Self> {
        let mut halton = HaltonStream::starting_at(1 + kernel.uniforms_needed(), 1)?;
        let carried = halton.next_block(n).into_iter().map(|p| p[1..].to_vec()).collect();
        Ok(Self {
            halton,
            hilbert: HilbertMap::finest(kernel.dim())?,
            psi,
            carried,
        })
    }
}

fn particle_keys<F: InnerFilter>(cloud: &ParameterCloud<F::Belief>, filter: &F, keying: RngKeying) -> Vec<u64> {
    match keying {
        RngKeying::Slot => (0..cloud.len() as u64).collect(),
        RngKeying::ContentHash => {
            let hashes: Vec<u64> = cloud
                .thetas
                .iter()
                .zip(&cloud.beliefs)
                .map(|(t, b)| hash_f64s(&filter.mean(b), hash_f64s(t, 0x51ed)))
                .collect();
            let mut seen = std::collections::HashMap::<u64, u64>::new();
            hashes
                .iter()
                .map(|h| {
                    let rank = seen.entry(*h).or_insert(0);
                    let key = crate::rng::splitmix64(h ^ rank.wrapping_mul(0x9E37_79B9));
                    *rank += 1;
                    key
                })
                .collect()
        }
    }
}

/// Runs jitter + inner step for every particle in parallel. `propose` maps
/// `(slot, theta, rng)` to the jittered parameters.
fn propagate_particles<F, P>(
    cloud: &mut ParameterCloud<F::Belief>,
    y: &[f64],
    filter: &F,
    ctx: &StepContext,
    step: u64,
    propose: P,
) -> Vec<StepOutcome>
where
    F: InnerFilter,
    P: Fn(usize, &[f64], &mut StreamRng) -> Vec<f64> + Sync,
{
    let keys = particle_keys(cloud, filter, ctx.keying);
    cloud
        .thetas
        .par_iter_mut()
        .zip(cloud.beliefs.par_iter_mut())
        .enumerate()
        .map(|(i, (theta, belief))| {
            let mut rng = stream(ctx.seed, Purpose::Particle, &[step, keys[i]]);
            *theta = propose(i, theta, &mut rng);
            filter.step(belief, theta, y, &mut rng)
        })
        .collect()
}

/// Weights from the previous weights and the new log-likelihoods, with the
/// uniform fallback when every particle failed.
fn reweight(prev: &[f64], outcomes: &[StepOutcome]) -> (Vec<f64>, Vec<f64>, bool) {
    let log_lik: Vec<f64> = outcomes.iter().map(|o| o.log_likelihood).collect();
    let log_w: Vec<f64> = prev.iter().zip(&log_lik).map(|(w, l)| w.ln() + l).collect();
    match normalize_log_weights(&log_w) {
        Some(w) => (w, log_lik, false),
        None => (vec![1.0 / prev.len() as f64; prev.len()], log_lik, true),
    }
}

fn summarize<F: InnerFilter>(
    cloud: &ParameterCloud<F::Belief>,
    weights: &[f64],
    filter: &F,
    outcomes: &[StepOutcome],
    all_failed: bool,
    step: u64,
) -> PosteriorSummary {
    let mut warnings = Vec::new();
    if all_failed {
        warnings.push(format!("step {step}: every likelihood was -inf, using uniform weights"));
    }
    PosteriorSummary {
        step,
        theta_mean: posterior_mean(&cloud.thetas, weights),
        theta_cov: posterior_cov(&cloud.thetas, weights),
        state_predictor: state_predictor(filter, &cloud.beliefs, weights),
        ess: effective_sample_size(weights),
        diverged_particles: outcomes.iter().filter(|o| o.diverged).count(),
        mse_per_dim: None,
        warnings,
    }
}

fn apply_selection<B: Clone>(cloud: &mut ParameterCloud<B>, picks: &[usize]) {
    cloud.thetas = picks.iter().map(|&j| cloud.thetas[j].clone()).collect();
    cloud.beliefs = picks.iter().map(|&j| cloud.beliefs[j].clone()).collect();
    cloud.weights = vec![1.0 / picks.len() as f64; picks.len()];
}

fn should_resample(ctx: &StepContext, weights: &[f64]) -> bool {
    match ctx.ess_threshold {
        None => true,
        Some(t) => effective_sample_size(weights) < t * weights.len() as f64,
    }
}

/// One step of the Monte Carlo nested filter: jitter, inner predict/update,
/// reweight, summarize, multinomial resampling.
pub fn nhf_step<F: InnerFilter>(
    cloud: &mut ParameterCloud<F::Belief>,
    y: &[f64],
    filter: &F,
    ctx: &StepContext,
) -> Result<StepReport> {
    check_len("observation", filter.dims().d_y, y.len())?;
    let step = cloud.step + 1;
    let outcomes = propagate_particles(cloud, y, filter, ctx, step, |_, theta, rng| {
        ctx.kernel.propose(theta, &ctx.prior, rng)
    });
    let (weights, log_likelihoods, all_failed) = reweight(&cloud.weights, &outcomes);
    let summary = summarize(cloud, &weights, filter, &outcomes, all_failed, step);
    let report = StepReport {
        summary,
        thetas: cloud.thetas.clone(),
        weights: weights.clone(),
        log_likelihoods,
    };
    if should_resample(ctx, &weights) {
        let picks = multinomial_resample(&weights, &mut stream(ctx.seed, Purpose::Resample, &[step]));
        apply_selection(cloud, &picks);
    } else {
        cloud.weights = weights;
    }
    cloud.step = step;
    Ok(report)
}

/// One step of the quasi-Monte Carlo nested filter: jitter driven by the
/// carried QMC uniforms, inner predict/update, reweight, summarize, Hilbert
/// sort and sorted-uniform resampling with a fresh QMC block.
pub fn sqmc_step<F: InnerFilter>(
    cloud: &mut ParameterCloud<F::Belief>,
    y: &[f64],
    filter: &F,
    ctx: &StepContext,
    qmc: &mut SqmcState,
) -> Result<StepReport> {
    check_len("observation", filter.dims().d_y, y.len())?;
    check_len("carried QMC points", cloud.len(), qmc.carried.len())?;
    let step = cloud.step + 1;
    let carried = &qmc.carried;
    let outcomes = propagate_particles(cloud, y, filter, ctx, step, |i, theta, _| {
        ctx.kernel
            .propose_qmc(theta, &ctx.prior, &carried[i])
            .expect("carried uniforms have the kernel's width")
    });
    let (weights, log_likelihoods, all_failed) = reweight(&cloud.weights, &outcomes);
    let summary = summarize(cloud, &weights, filter, &outcomes, all_failed, step);
    let report = StepReport {
        summary,
        thetas: cloud.thetas.clone(),
        weights: weights.clone(),
        log_likelihoods,
    };

    let block = qmc.halton.next_block(cloud.len());
    if should_resample(ctx, &weights) {
        let order = hilbert_sort(&cloud.thetas, &weights, &qmc.hilbert, &qmc.psi)?;
        let scalars: Vec<f64> = block.iter().map(|p| p[0]).collect();
        let (picks, c) = sorted_uniform_resample(&weights, &order, &scalars)?;
        qmc.carried = c.iter().map(|&ci| block[ci][1..].to_vec()).collect();
        apply_selection(cloud, &picks);
    } else {
        qmc.carried = block.iter().map(|p| p[1..].to_vec()).collect();
        cloud.weights = weights;
    }
    cloud.step = step;
    Ok(report)
}

/// Outer recursion flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterKind {
    #[default]
    Smc,
    Sqmc,
}

/// A complete nested filter: inner filter, parameter cloud and, for the
/// quasi-Monte Carlo flavour, its point streams.
pub struct NestedFilter<F: InnerFilter> {
    pub filter: F,
    pub ctx: StepContext,
    pub cloud: ParameterCloud<F::Belief>,
    pub qmc: Option<SqmcState>,
}

impl<F: InnerFilter> NestedFilter<F> {
    /// Draws the initial parameters from the prior (pseudo-randomly for
    /// `Smc`, from a Halton stream for `Sqmc`) and initializes one inner
    /// filter per particle.
    pub fn new(
        filter: F,
        kind: OuterKind,
        n: usize,
        ctx: StepContext,
        psi: PsiConfig,
        state_prior: &StatePrior,
    ) -> Result<Self> {
        if n == 0 {
            return Err(NhfError::invalid("N must be at least 1"));
        }
        check_len("prior box", filter.dims().d_theta, ctx.prior.dim())?;
        check_len("jitter kernel", ctx.prior.dim(), ctx.kernel.dim())?;
        check_len("state prior", filter.dims().d_x, state_prior.mean.len())?;
        let (thetas, qmc) = match kind {
            OuterKind::Smc => {
                let mut rng = stream(ctx.seed, Purpose::Prior, &[]);
                (draw_prior(n, &ctx.prior, PriorSource::Random(&mut rng))?, None)
            }
            OuterKind::Sqmc => {
                let mut h = HaltonStream::starting_at(ctx.prior.dim(), 1)?;
                let thetas = draw_prior::<StreamRng>(n, &ctx.prior, PriorSource::Halton(&mut h))?;
                (thetas, Some(SqmcState::new(n, &ctx.kernel, psi)?))
            }
        };
        let beliefs = (0..n as u64)
            .into_par_iter()
            .map(|i| filter.init(state_prior, &mut stream(ctx.seed, Purpose::StatePrior, &[i])))
            .collect();
        Ok(Self {
            filter,
            ctx,
            cloud: ParameterCloud::new(thetas, beliefs)?,
            qmc,
        })
    }

    pub fn step(&mut self, y: &[f64]) -> Result<StepReport> {
        match self.qmc.as_mut() {
            None => nhf_step(&mut self.cloud, y, &self.filter, &self.ctx),
            Some(q) => sqmc_step(&mut self.cloud, y, &self.filter, &self.ctx, q),
        }
    }
}
