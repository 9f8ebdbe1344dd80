//! Convergence of the nested filter towards the exact posterior on a scalar
//! linear-Gaussian model, as a function of the number of particles.

use serde::{Deserialize, Serialize};

use crate::error::{NhfError, Result};
use crate::oracle::{grid_posterior, uniform_grid, LinearGaussianModel, LinearKalmanScheme};
use crate::outer::{JitterKernel, JitterMode, NestedFilter, OuterKind, PriorBox, RngKeying, StepContext};
use crate::qmc::PsiConfig;
use crate::rng::{derive_seed, repetition_seed, stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub particle_counts: Vec<usize>,
    pub seeds: usize,
    /// Observations per data set.
    pub steps: usize,
    /// True transition coefficient.
    pub theta_true: f64,
    /// Uniform prior support of the transition coefficient.
    pub prior: (f64, f64),
    pub q: f64,
    pub r: f64,
    pub grid_size: usize,
    pub outer: OuterKind,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            particle_counts: vec![25, 100, 400, 1600],
            seeds: 50,
            steps: 50,
            theta_true: 0.7,
            prior: (0.0, 1.2),
            q: 1.0,
            r: 0.25,
            grid_size: crate::oracle::DEFAULT_GRID_SIZE,
            outer: OuterKind::Smc,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: usize,
    /// Mean over seeds of `|posterior mean - oracle mean|`.
    pub mean_error: f64,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ConvergenceConfig,
    pub points: Vec<ConvergencePoint>,
    /// Least-squares slope of `log(mean_error)` against `log(N)`.
    pub slope: f64,
}

/// Least-squares slope of `log y` on `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(NhfError::invalid(
            "log-log regression needs at least two positive pairs",
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

pub fn convergence_experiment(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.particle_counts.is_empty() || cfg.seeds == 0 || cfg.particle_counts.contains(&0) {
        return Err(NhfError::invalid(
            "convergence needs particle counts >= 1 and at least one seed",
        ));
    }
    let scheme = LinearKalmanScheme::new(LinearGaussianModel::scalar_ar1(cfg.q, cfg.r, 0.0, 1.0))?;
    let prior = PriorBox::new(&[cfg.prior])?;
    let grid = uniform_grid(cfg.prior.0, cfg.prior.1, cfg.grid_size)?;
    let state_prior = scheme.state_prior();

    let mut errors = vec![Vec::with_capacity(cfg.seeds); cfg.particle_counts.len()];
    for s in 0..cfg.seeds as u64 {
        let seed = repetition_seed(cfg.seed, s);
        let (_, ys) = scheme
            .model
            .simulate(cfg.theta_true, cfg.steps, &mut stream(seed, Purpose::Truth, &[]))?;
        let oracle = grid_posterior(&grid, &scheme.model, &ys)?.mean();
        for (k, &n) in cfg.particle_counts.iter().enumerate() {
            let ctx = StepContext {
                seed: derive_seed(seed, Purpose::Particle, &[n as u64]),
                kernel: JitterKernel::default_for(&prior, n, JitterMode::Mixture)?,
                prior: prior.clone(),
                keying: RngKeying::Slot,
                ess_threshold: None,
            };
            let mut nf = NestedFilter::new(scheme.clone(), cfg.outer, n, ctx, PsiConfig::default(), &state_prior)?;
            let mut est = f64::NAN;
            for y in &ys {
                est = nf.step(y.as_slice())?.summary.theta_mean[0];
            }
            errors[k].push((est - oracle).abs());
        }
    }
    let points: Vec<ConvergencePoint> = cfg
        .particle_counts
        .iter()
        .zip(errors)
        .map(|(&n, e)| ConvergencePoint {
            n,
            mean_error: e.iter().sum::<f64>() / e.len() as f64,
            errors: e,
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_error).collect();
    let slope = if points.len() >= 2 {
        log_log_slope(&xs, &ys)?
    } else {
        f64::NAN
    };
    Ok(ConvergenceReport {
        config: cfg.clone(),
        points,
        slope,
    })
}
