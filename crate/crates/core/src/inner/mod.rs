//! Inner state filters run conditionally on a fixed parameter vector.
//!
//! Each filter turns a belief about `x_{n-1}` and an observation `y_n` into a
//! belief about `x_n` and an estimate of `log p(y_n | theta, y_{1:n-1})`. The
//! outer layer only sees them through [`InnerFilter`].

mod bpf;
mod ekf;
mod enkf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::StateSpaceModel;
use crate::rng::StreamRng;

pub use bpf::{bpf_step, BpfFilter, ParticleBelief};
pub use ekf::{ekf_predict, ekf_update, EkfFilter};
pub use enkf::{
    block_diag_inverse, enkf_predict, enkf_update, enkf_update_with_perturbations, ensemble_moments, EnkfConfig,
    EnkfDeviations, EnkfFilter, EnsembleNormalization,
};

/// Gaussian state belief `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Ensemble belief: the columns of `members` are the `M` state samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBelief {
    pub members: DMatrix<f64>,
}

impl EnsembleBelief {
    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.column_mean()
    }
}

/// Outcome of an update: the log predictive likelihood of the observation
/// and the predictive observation moments it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEstimate {
    pub log_value: f64,
    pub predicted_obs_mean: DVector<f64>,
    pub predicted_obs_cov: DMatrix<f64>,
}

/// Initial state belief shared by every inner filter: `N(mean, std^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePrior {
    pub mean: Vec<f64>,
    pub std: f64,
}

/// What one predict/update cycle reports to the outer layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// `log u_n(theta)`, `-inf` when the filter failed.
    pub log_likelihood: f64,
    pub diverged: bool,
}

impl StepOutcome {
    pub(crate) fn ok(log_likelihood: f64) -> Self {
        if log_likelihood.is_nan() {
            return Self::failed();
        }
        Self {
            log_likelihood,
            diverged: false,
        }
    }

    pub(crate) fn failed() -> Self {
        Self {
            log_likelihood: f64::NEG_INFINITY,
            diverged: true,
        }
    }
}

/// Dimensions of the problem an inner filter solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterDims {
    pub d_x: usize,
    pub d_y: usize,
    pub d_theta: usize,
}

impl FilterDims {
    pub fn of(model: &StateSpaceModel) -> Self {
        Self {
            d_x: model.d_x(),
            d_y: model.d_y(),
            d_theta: model.d_theta(),
        }
    }
}

/// A state filter that can be embedded in each parameter particle.
pub trait InnerFilter: Sync {
    type Belief: Clone + Send + Sync;

    fn dims(&self) -> FilterDims;

    /// Belief at time zero.
    fn init(&self, prior: &StatePrior, rng: &mut StreamRng) -> Self::Belief;

    /// Predicts from `n-1` to `n` under `theta`, assimilates `y`, and returns
    /// the log-likelihood estimate. On failure the belief is left as it was
    /// before the failing stage and the outcome is flagged.
    fn step(&self, belief: &mut Self::Belief, theta: &[f64], y: &[f64], rng: &mut StreamRng) -> StepOutcome;

    /// Posterior mean of the state.
    fn mean(&self, belief: &Self::Belief) -> Vec<f64>;

    /// Gaussian summary `(mean, cov)` of the belief.
    fn gaussian(&self, belief: &Self::Belief) -> GaussianBelief;
}

/// Sample mean and covariance (normalized by `M`) of the columns of `x`.
pub(crate) fn sample_gaussian(x: &DMatrix<f64>) -> GaussianBelief {
    let mean = x.column_mean();
    let mut dev = x.clone();
    for mut c in dev.column_iter_mut() {
        c -= &mean;
    }
    let cov = &dev * dev.transpose() / x.ncols() as f64;
    GaussianBelief { mean, cov }
}
