//! Weighted summaries of the parameter cloud and the predictive state mixture.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::inner::{GaussianBelief, InnerFilter};
use crate::stats::{gaussian_log_pdf, log_sum_exp};

/// Posterior summaries after one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub step: u64,
    pub theta_mean: Vec<f64>,
    /// Row-major `d_theta x d_theta`.
    pub theta_cov: Vec<Vec<f64>>,
    pub state_predictor: Vec<f64>,
    pub ess: f64,
    pub diverged_particles: usize,
    /// Filled in when the truth is known.
    pub mse_per_dim: Option<f64>,
    pub warnings: Vec<String>,
}

/// `sum_i w_i theta_i`, skipping zero-weight particles.
pub fn posterior_mean(thetas: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let d = thetas.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (t, w) in thetas.iter().zip(weights) {
        if *w > 0.0 {
            for (o, v) in out.iter_mut().zip(t) {
                *o += w * v;
            }
        }
    }
    out
}

/// `sum_i w_i (theta_i - mean)(theta_i - mean)^T`.
pub fn posterior_cov(thetas: &[Vec<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
    let mean = posterior_mean(thetas, weights);
    let d = mean.len();
    let mut out = vec![vec![0.0; d]; d];
    for (t, w) in thetas.iter().zip(weights) {
        if *w > 0.0 {
            for a in 0..d {
                for b in 0..=a {
                    out[a][b] += w * (t[a] - mean[a]) * (t[b] - mean[b]);
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            out[b][a] = out[a][b];
        }
    }
    out
}

/// `sum_i w_i xhat_i` over the inner filter means.
pub fn state_predictor<F: InnerFilter>(filter: &F, beliefs: &[F::Belief], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; filter.dims().d_x];
    for (b, w) in beliefs.iter().zip(weights) {
        if *w > 0.0 {
            for (o, v) in out.iter_mut().zip(filter.mean(b)) {
                *o += w * v;
            }
        }
    }
    out
}

/// Weighted Gaussian mixture approximating the state posterior.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianBelief>,
}

impl GaussianMixture {
    pub fn from_cloud<F: InnerFilter>(filter: &F, beliefs: &[F::Belief], weights: &[f64]) -> Self {
        let (w, c) = beliefs
            .iter()
            .zip(weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(b, w)| (*w, filter.gaussian(b)))
            .unzip();
        Self {
            weights: w,
            components: c,
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        let d = self.components.first().map_or(0, GaussianBelief::dim);
        let mut out = DVector::zeros(d);
        for (w, c) in self.weights.iter().zip(&self.components) {
            out.axpy(*w, &c.mean, 1.0);
        }
        out
    }

    /// `log sum_i w_i N(x | mean_i, cov_i)`; components with singular
    /// covariance contribute nothing.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + gaussian_log_pdf(x, &c.mean, &c.cov).unwrap_or(f64::NEG_INFINITY))
            .collect();
        log_sum_exp(&terms)
    }
}
