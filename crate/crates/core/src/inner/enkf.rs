//! Perturbed-observation ensemble Kalman filter and the block-diagonal
//! approximation of the innovation covariance inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    sample_gaussian, EnsembleBelief, FilterDims, GaussianBelief, InnerFilter, LikelihoodEstimate, StatePrior,
    StepOutcome,
};
use crate::error::{check_len, NhfError, Result};
use crate::model::{NoiseScale, Rk4Stepper, StateSpaceModel};
use crate::rng::StreamRng;
use crate::stats::LN_2PI;

/// Divisor of the ensemble covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleNormalization {
    /// `1 / M`.
    #[default]
    M,
    /// `1 / (M - 1)`.
    MMinusOne,
}

/// Which observation deviations enter the gain and the innovation covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnkfDeviations {
    /// `Z = g(X) + R - mean(g(X) + R)`.
    #[default]
    Perturbed,
    /// `Z = g(X) - mean(g(X))`.
    Unperturbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnkfConfig {
    pub normalization: EnsembleNormalization,
    pub deviations: EnkfDeviations,
    /// Block size of the block-diagonal inverse; `None` means `min(d_y, 5)`.
    pub block_size: Option<usize>,
    /// The block-diagonal inverse is used when `d_y` exceeds this.
    pub block_threshold: usize,
}

impl Default for EnkfConfig {
    fn default() -> Self {
        Self {
            normalization: EnsembleNormalization::M,
            deviations: EnkfDeviations::Perturbed,
            block_size: None,
            block_threshold: 50,
        }
    }
}

impl EnkfConfig {
    fn divisor(&self, m: usize) -> f64 {
        match self.normalization {
            EnsembleNormalization::M => m as f64,
            EnsembleNormalization::MMinusOne => (m - 1) as f64,
        }
    }

    /// Block size used for an observation of dimension `d_y`, if any.
    pub fn blocks_for(&self, d_y: usize) -> Option<usize> {
        (d_y > self.block_threshold).then(|| self.block_size.unwrap_or(5).clamp(1, d_y))
    }
}

/// Ensemble mean and covariance normalized by `M`.
pub fn ensemble_moments(members: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let g = sample_gaussian(members);
    (g.mean, g.cov)
}

/// Propagates every member through `m` stochastic RK4 steps.
pub fn enkf_predict<R: Rng + ?Sized>(
    ens: &EnsembleBelief,
    theta: &[f64],
    model: &StateSpaceModel,
    rng: &mut R,
) -> Result<EnsembleBelief> {
    let d = model.d_x();
    check_len("ensemble rows", d, ens.members.nrows())?;
    if ens.size() < 2 {
        return Err(NhfError::invalid("ensemble needs at least 2 members"));
    }
    let mut members = ens.members.clone();
    let mut stepper = Rk4Stepper::new(d);
    let scale = NoiseScale::Uniform(model.sigma);
    let drift = model.drift.as_ref();
    for col in members.as_mut_slice().chunks_exact_mut(d) {
        for _ in 0..model.m {
            stepper.step(drift, col, theta, model.h, scale, rng);
        }
    }
    if members.iter().any(|v| !v.is_finite()) {
        return Err(NhfError::Diverged("non-finite ensemble prediction".into()));
    }
    Ok(EnsembleBelief { members })
}

/// EnKF analysis step with observation perturbations drawn from `rng`.
pub fn enkf_update<R: Rng + ?Sized>(
    ens: &EnsembleBelief,
    y: &[f64],
    model: &StateSpaceModel,
    cfg: &EnkfConfig,
    rng: &mut R,
) -> Result<(EnsembleBelief, LikelihoodEstimate)> {
    let d_y = model.d_y();
    let m = ens.size();
    let perturb = DMatrix::from_fn(d_y, m, |_, _| model.sigma_o * rng.sample::<f64, _>(StandardNormal));
    enkf_update_with_perturbations(ens, y, model, cfg, &perturb)
}

/// EnKF analysis step with explicit observation perturbations `R` (`d_y x M`).
pub fn enkf_update_with_perturbations(
    ens: &EnsembleBelief,
    y: &[f64],
    model: &StateSpaceModel,
    cfg: &EnkfConfig,
    perturb: &DMatrix<f64>,
) -> Result<(EnsembleBelief, LikelihoodEstimate)> {
    let d = model.d_x();
    let d_y = model.d_y();
    let m = ens.size();
    check_len("ensemble rows", d, ens.members.nrows())?;
    check_len("observation", d_y, y.len())?;
    check_len("perturbation rows", d_y, perturb.nrows())?;
    check_len("perturbation columns", m, perturb.ncols())?;
    if m < 2 {
        return Err(NhfError::invalid("ensemble needs at least 2 members"));
    }
    let x = &ens.members;
    let obs: Vec<usize> = model.observed_indices().collect();
    let x_mean = x.column_mean();
    let mut x_dev = x.clone();
    for mut c in x_dev.column_iter_mut() {
        c -= &x_mean;
    }
    let g = DMatrix::from_fn(d_y, m, |i, j| x[(obs[i], j)]);
    let y_pert = &g + perturb;
    let mut z_dev = match cfg.deviations {
        EnkfDeviations::Perturbed => y_pert.clone(),
        EnkfDeviations::Unperturbed => g.clone(),
    };
    let z_mean = z_dev.column_mean();
    for mut c in z_dev.column_iter_mut() {
        c -= &z_mean;
    }

    let norm = cfg.divisor(m);
    let r = model.sigma_o * model.sigma_o;
    let solver = CovSolver::build(&z_dev, norm, r, cfg.blocks_for(d_y))?;

    // innovations y 1^T - Y
    let mut w = DMatrix::from_fn(d_y, m, |i, j| y[i] - y_pert[(i, j)]);
    solver.solve_in_place(&mut w);
    let cross = &x_dev * z_dev.transpose() / norm;
    let mut members = x.clone();
    members.gemm(1.0, &cross, &w, 1.0);

    let pred_obs = DVector::from_iterator(d_y, obs.iter().map(|&j| x_mean[j]));
    let mut innov = DMatrix::from_fn(d_y, 1, |i, _| y[i] - pred_obs[i]);
    let innov_raw = innov.clone();
    solver.solve_in_place(&mut innov);
    let quad = innov_raw.dot(&innov);
    let log_value = -0.5 * (d_y as f64 * LN_2PI + solver.log_det() + quad);
    if !log_value.is_finite() || members.iter().any(|v| !v.is_finite()) {
        return Err(NhfError::Diverged("non-finite EnKF update".into()));
    }
    Ok((
        EnsembleBelief { members },
        LikelihoodEstimate {
            log_value,
            predicted_obs_mean: pred_obs,
            predicted_obs_cov: solver.matrix(),
        },
    ))
}

/// Cholesky factorization of the innovation covariance, either dense or
/// restricted to diagonal blocks.
enum CovSolver {
    Dense(Cholesky<f64, Dyn>, DMatrix<f64>),
    Blocks {
        d_y: usize,
        blocks: Vec<(usize, Cholesky<f64, Dyn>, DMatrix<f64>)>,
    },
}

impl CovSolver {
    /// `Z Z^T / norm + r I`, optionally masked to blocks of `block` rows
    /// (the last block takes the remainder).
    fn build(z_dev: &DMatrix<f64>, norm: f64, r: f64, block: Option<usize>) -> Result<Self> {
        let d_y = z_dev.nrows();
        let Some(b) = block else {
            let mut s = z_dev * z_dev.transpose() / norm;
            for i in 0..d_y {
                s[(i, i)] += r;
            }
            let chol = s
                .clone()
                .cholesky()
                .ok_or(NhfError::NotPositiveDefinite("EnKF innovation covariance"))?;
            return Ok(CovSolver::Dense(chol, s));
        };
        let mut blocks = Vec::with_capacity(d_y.div_ceil(b));
        let mut start = 0;
        let mut idx = 0;
        while start < d_y {
            let len = b.min(d_y - start);
            let rows = z_dev.rows(start, len);
            let mut s = &rows * rows.transpose() / norm;
            for i in 0..len {
                s[(i, i)] += r;
            }
            let chol = s.clone().cholesky().ok_or(NhfError::SingularBlock { block: idx })?;
            blocks.push((start, chol, s));
            start += len;
            idx += 1;
        }
        Ok(CovSolver::Blocks { d_y, blocks })
    }

    fn solve_in_place(&self, rhs: &mut DMatrix<f64>) {
        match self {
            CovSolver::Dense(chol, _) => chol.solve_mut(rhs),
            CovSolver::Blocks { blocks, .. } => {
                for (start, chol, s) in blocks {
                    let mut part = rhs.rows(*start, s.nrows()).clone_owned();
                    chol.solve_mut(&mut part);
                    rhs.rows_mut(*start, s.nrows()).copy_from(&part);
                }
            }
        }
    }

    fn log_det(&self) -> f64 {
        let ld = |c: &Cholesky<f64, Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        match self {
            CovSolver::Dense(chol, _) => ld(chol),
            CovSolver::Blocks { blocks, .. } => blocks.iter().map(|(_, c, _)| ld(c)).sum(),
        }
    }

    fn matrix(&self) -> DMatrix<f64> {
        match self {
            CovSolver::Dense(_, s) => s.clone(),
            CovSolver::Blocks { d_y, blocks } => {
                let mut out = DMatrix::zeros(*d_y, *d_y);
                for (start, _, s) in blocks {
                    out.view_mut((*start, *start), s.shape()).copy_from(s);
                }
                out
            }
        }
    }
}

/// Masks `s` to its diagonal blocks of size `d_q` and inverts each block.
pub fn block_diag_inverse(s: &DMatrix<f64>, d_q: usize) -> Result<DMatrix<f64>> {
    let d_y = s.nrows();
    check_len("block inverse columns", d_y, s.ncols())?;
    if d_q == 0 || d_y % d_q != 0 {
        return Err(NhfError::invalid(format!("block size {d_q} does not divide {d_y}")));
    }
    let mut out = DMatrix::zeros(d_y, d_y);
    for q in 0..d_y / d_q {
        let start = q * d_q;
        let block = s.view((start, start), (d_q, d_q)).clone_owned();
        let inv = block.try_inverse().ok_or(NhfError::SingularBlock { block: q })?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(NhfError::SingularBlock { block: q });
        }
        out.view_mut((start, start), (d_q, d_q)).copy_from(&inv);
    }
    Ok(out)
}

/// EnKF as an inner filter.
#[derive(Debug, Clone)]
pub struct EnkfFilter {
    pub model: StateSpaceModel,
    pub members: usize,
    pub config: EnkfConfig,
}

impl EnkfFilter {
    pub fn new(model: StateSpaceModel, members: usize, config: EnkfConfig) -> Result<Self> {
        if members < 2 {
            return Err(NhfError::invalid("EnKF needs at least 2 members"));
        }
        Ok(Self { model, members, config })
    }
}

impl InnerFilter for EnkfFilter {
    type Belief = EnsembleBelief;

    fn dims(&self) -> FilterDims {
        FilterDims::of(&self.model)
    }

    fn init(&self, prior: &StatePrior, rng: &mut StreamRng) -> EnsembleBelief {
        let d = prior.mean.len();
        let members = DMatrix::from_fn(d, self.members, |i, _| {
            prior.mean[i] + prior.std * rng.sample::<f64, _>(StandardNormal)
        });
        EnsembleBelief { members }
    }

    fn step(&self, belief: &mut EnsembleBelief, theta: &[f64], y: &[f64], rng: &mut StreamRng) -> StepOutcome {
        let Ok(pred) = enkf_predict(belief, theta, &self.model, rng) else {
            return StepOutcome::failed();
        };
        match enkf_update(&pred, y, &self.model, &self.config, rng) {
            Ok((post, lik)) => {
                *belief = post;
                StepOutcome::ok(lik.log_value)
            }
            Err(_) => {
                *belief = pred;
                StepOutcome::failed()
            }
        }
    }

    fn mean(&self, belief: &EnsembleBelief) -> Vec<f64> {
        belief.mean().iter().copied().collect()
    }

    fn gaussian(&self, belief: &EnsembleBelief) -> GaussianBelief {
        sample_gaussian(&belief.members)
    }
}
