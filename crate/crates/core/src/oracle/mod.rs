//! Exact reference computations for linear-Gaussian models: the Kalman
//! filter, a dense grid posterior over a scalar parameter, and a Kalman inner
//! filter that plugs into the nested filter.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, NhfError, Result};
use crate::inner::{FilterDims, GaussianBelief, InnerFilter, StatePrior, StepOutcome};
use crate::rng::StreamRng;
use crate::stats::{normalize_log_weights, LN_2PI};

/// Default number of grid nodes for scalar parameter posteriors.
pub const DEFAULT_GRID_SIZE: usize = 512;

/// `x_n = A(theta) x_{n-1} + q_n`, `y_n = H x_n + r_n`, with
/// `A(theta) = A0 + theta_0 A1`, `q ~ N(0, Q)`, `r ~ N(0, R)` and
/// `x_0 ~ N(prior_mean, prior_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl LinearGaussianModel {
    /// Scalar chain `x_n = theta x_{n-1} + q`, `y_n = x_n + r`.
    pub fn scalar_ar1(q: f64, r: f64, prior_mean: f64, prior_var: f64) -> Self {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self {
            a0: s(0.0),
            a1: s(1.0),
            q: s(q),
            h: s(1.0),
            r: s(r),
            prior_mean: DVector::from_element(1, prior_mean),
            prior_cov: s(prior_var),
        }
    }

    pub fn d_x(&self) -> usize {
        self.a0.nrows()
    }

    pub fn d_y(&self) -> usize {
        self.h.nrows()
    }

    pub fn transition(&self, theta: f64) -> DMatrix<f64> {
        &self.a0 + &self.a1 * theta
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_x();
        let dy = self.d_y();
        for (name, m, r, c) in [
            ("A0", &self.a0, d, d),
            ("A1", &self.a1, d, d),
            ("Q", &self.q, d, d),
            ("H", &self.h, dy, d),
            ("R", &self.r, dy, dy),
            ("prior covariance", &self.prior_cov, d, d),
        ] {
            if m.shape() != (r, c) {
                return Err(NhfError::invalid(format!(
                    "{name} has shape {:?}, expected ({r}, {c})",
                    m.shape()
                )));
            }
        }
        check_len("prior mean", d, self.prior_mean.len())?;
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("prior covariance", &self.prior_cov)] {
            if (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
                return Err(NhfError::invalid(format!("{name} is not symmetric")));
            }
        }
        if self.r.clone().cholesky().is_none() {
            return Err(NhfError::NotPositiveDefinite("observation covariance R"));
        }
        Ok(())
    }

    /// Simulates `n` steps; returns `(states x_1..x_n, observations y_1..y_n)`.
    pub fn simulate(
        &self,
        theta: f64,
        n: usize,
        rng: &mut StreamRng,
    ) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        self.validate()?;
        let a = self.transition(theta);
        let factor = |m: &DMatrix<f64>| -> DMatrix<f64> {
            // PSD square root through the eigen-decomposition, so that Q = 0 works.
            let eig = m.clone().symmetric_eigen();
            let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
        };
        let (lq, lr, lp) = (factor(&self.q), factor(&self.r), factor(&self.prior_cov));
        let mut normal = |d: usize| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = &self.prior_mean + &lp * normal(self.d_x());
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            x = &a * &x + &lq * normal(self.d_x());
            ys.push(&self.h * &x + &lr * normal(self.d_y()));
            xs.push(x.clone());
        }
        Ok((xs, ys))
    }
}

/// Filtering means, covariances and per-step predictive log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub log_likelihoods: Vec<f64>,
}

impl KalmanOutput {
    pub fn total_log_likelihood(&self) -> f64 {
        self.log_likelihoods.iter().sum()
    }
}

/// One Kalman prediction `N(A m, A P A^T + Q)`.
pub fn kalman_predict(belief: &GaussianBelief, a: &DMatrix<f64>, q: &DMatrix<f64>) -> GaussianBelief {
    let mean = a * &belief.mean;
    let mut cov = a * &belief.cov * a.transpose() + q;
    symmetrize(&mut cov);
    GaussianBelief { mean, cov }
}

/// One Kalman update; returns the posterior and `log N(y | H m, H P H^T + R)`.
pub fn kalman_update(
    belief: &GaussianBelief,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(GaussianBelief, f64)> {
    let hp = h * &belief.cov;
    let mut s = &hp * h.transpose() + r;
    symmetrize(&mut s);
    let chol = s
        .cholesky()
        .ok_or(NhfError::NotPositiveDefinite("Kalman innovation covariance"))?;
    let innov = y - h * &belief.mean;
    let s_inv_innov = chol.solve(&innov);
    let s_inv_hp = chol.solve(&hp);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ll = -0.5 * (y.len() as f64 * LN_2PI + log_det + innov.dot(&s_inv_innov));
    let mean = &belief.mean + hp.tr_mul(&s_inv_innov);
    let mut cov = &belief.cov - hp.tr_mul(&s_inv_hp);
    symmetrize(&mut cov);
    Ok((GaussianBelief { mean, cov }, ll))
}

/// Exact Kalman filter for `model` under parameter `theta`.
pub fn kalman_filter(model: &LinearGaussianModel, theta: f64, observations: &[DVector<f64>]) -> Result<KalmanOutput> {
    model.validate()?;
    let a = model.transition(theta);
    let mut belief = GaussianBelief::new(model.prior_mean.clone(), model.prior_cov.clone());
    let mut out = KalmanOutput {
        means: Vec::new(),
        covs: Vec::new(),
        log_likelihoods: Vec::new(),
    };
    for y in observations {
        check_len("observation", model.d_y(), y.len())?;
        let pred = kalman_predict(&belief, &a, &model.q);
        let (post, ll) = kalman_update(&pred, y, &model.h, &model.r)?;
        out.means.push(post.mean.clone());
        out.covs.push(post.cov.clone());
        out.log_likelihoods.push(ll);
        belief = post;
    }
    Ok(out)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Normalized posterior weights over a grid of scalar parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GridPosterior {
    pub fn mean(&self) -> f64 {
        self.grid.iter().zip(&self.weights).map(|(g, w)| g * w).sum()
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        self.grid
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| w * (g - m) * (g - m))
            .sum::<f64>()
            .sqrt()
    }

    pub fn argmax(&self) -> f64 {
        let best = self
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        self.grid[best]
    }
}

/// `G` cell midpoints of `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, g: usize) -> Result<Vec<f64>> {
    if !(lo < hi) || g == 0 {
        return Err(NhfError::invalid("grid needs lo < hi and at least one node"));
    }
    let dx = (hi - lo) / g as f64;
    Ok((0..g).map(|i| lo + (i as f64 + 0.5) * dx).collect())
}

/// Posterior over the grid from per-node log-likelihood totals and log-prior
/// values (`None` for a flat prior).
pub fn grid_posterior_from_log_likelihoods(
    grid: &[f64],
    log_lik: &[f64],
    log_prior: Option<&[f64]>,
) -> Result<GridPosterior> {
    check_len("grid log-likelihoods", grid.len(), log_lik.len())?;
    let log_w: Vec<f64> = match log_prior {
        Some(p) => {
            check_len("grid log-prior", grid.len(), p.len())?;
            log_lik.iter().zip(p).map(|(l, p)| l + p).collect()
        }
        None => log_lik.to_vec(),
    };
    let weights =
        normalize_log_weights(&log_w).ok_or_else(|| NhfError::invalid("grid posterior has no finite mass"))?;
    Ok(GridPosterior {
        grid: grid.to_vec(),
        weights,
    })
}

/// Exact posterior over `theta_grid` under a flat prior:
/// `w_g ∝ exp(sum_n log p(y_n | theta_g, y_{1:n-1}))`.
pub fn grid_posterior(
    theta_grid: &[f64],
    model: &LinearGaussianModel,
    observations: &[DVector<f64>],
) -> Result<GridPosterior> {
    let log_lik = theta_grid
        .iter()
        .map(|&t| kalman_filter(model, t, observations).map(|o| o.total_log_likelihood()))
        .collect::<Result<Vec<_>>>()?;
    grid_posterior_from_log_likelihoods(theta_grid, &log_lik, None)
}

/// Exact Kalman filter as an inner filter for a [`LinearGaussianModel`];
/// its likelihood estimate is the exact predictive density.
#[derive(Debug, Clone)]
pub struct LinearKalmanScheme {
    pub model: LinearGaussianModel,
}

impl LinearKalmanScheme {
    pub fn new(model: LinearGaussianModel) -> Result<Self> {
        model.validate()?;
        Ok(Self { model })
    }

    /// The state prior to hand to the nested filter (the mean is what
    /// matters for dimension checks; `init` uses the model's prior).
    pub fn state_prior(&self) -> StatePrior {
        StatePrior {
            mean: self.model.prior_mean.iter().copied().collect(),
            std: 0.0,
        }
    }
}

impl InnerFilter for LinearKalmanScheme {
    type Belief = GaussianBelief;

    fn dims(&self) -> FilterDims {
        FilterDims {
            d_x: self.model.d_x(),
            d_y: self.model.d_y(),
            d_theta: 1,
        }
    }

    fn init(&self, _prior: &StatePrior, _rng: &mut StreamRng) -> GaussianBelief {
        GaussianBelief::new(self.model.prior_mean.clone(), self.model.prior_cov.clone())
    }

    fn step(&self, belief: &mut GaussianBelief, theta: &[f64], y: &[f64], _rng: &mut StreamRng) -> StepOutcome {
        let pred = kalman_predict(belief, &self.model.transition(theta[0]), &self.model.q);
        match kalman_update(&pred, &DVector::from_column_slice(y), &self.model.h, &self.model.r) {
            Ok((post, ll)) => {
                *belief = post;
                StepOutcome::ok(ll)
            }
            Err(_) => {
                *belief = pred;
                StepOutcome::failed()
            }
        }
    }

    fn mean(&self, belief: &GaussianBelief) -> Vec<f64> {
        belief.mean.iter().copied().collect()
    }

    fn gaussian(&self, belief: &GaussianBelief) -> GaussianBelief {
        belief.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn obs(values: &[f64]) -> Vec<DVector<f64>> {
        values.iter().map(|v| DVector::from_element(1, *v)).collect()
    }

    #[test]
    fn scalar_one_step_by_hand() {
        let m = LinearGaussianModel::scalar_ar1(0.0, 1.0, 0.0, 1.0);
        let out = kalman_filter(&m, 1.0, &obs(&[0.0])).unwrap();
        assert_eq!(out.means[0][0], 0.0);
        assert!((out.covs[0][(0, 0)] - 0.5).abs() < 1e-15);
        let want = (1.0 / (4.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((out.log_likelihoods[0] - want).abs() < 1e-14);
    }

    #[test]
    fn uninformative_observation_keeps_prior() {
        let m = LinearGaussianModel::scalar_ar1(0.0, 1e12, 2.0, 3.0);
        let out = kalman_filter(&m, 1.0, &obs(&[100.0])).unwrap();
        assert!((out.means[0][0] - 2.0).abs() < 1e-9);
        assert!((out.covs[0][(0, 0)] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn singular_innovation_is_an_error() {
        let mut m = LinearGaussianModel::scalar_ar1(0.0, 1.0, 0.0, 0.0);
        m.r = DMatrix::zeros(1, 1);
        assert!(kalman_filter(&m, 1.0, &obs(&[0.0])).is_err());
        assert!(LinearKalmanScheme::new(m).is_err());
    }

    /// Bootstrap particle filter with 10^6 particles on a scalar chain.
    fn bootstrap_means(theta: f64, q: f64, r: f64, ys: &[DVector<f64>], n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, Purpose::Particle, &[]);
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut w = vec![0.0; n];
        let mut means = Vec::new();
        for y in ys {
            for (xi, wi) in x.iter_mut().zip(w.iter_mut()) {
                *xi = theta * *xi + q.sqrt() * rng.sample::<f64, _>(StandardNormal);
                *wi = -0.5 * (y[0] - *xi).powi(2) / r;
            }
            let wn = normalize_log_weights(&w).unwrap();
            means.push(x.iter().zip(&wn).map(|(a, b)| a * b).sum());
            let picks = crate::outer::multinomial_resample(&wn, &mut rng);
            x = picks.iter().map(|&j| x[j]).collect();
        }
        means
    }

    #[test]
    fn scalar_chain_matches_large_bootstrap_filter() {
        let m = LinearGaussianModel::scalar_ar1(1.0, 1.0, 0.0, 1.0);
        let (_, ys) = m.simulate(0.9, 100, &mut stream(3, Purpose::Truth, &[])).unwrap();
        let kf = kalman_filter(&m, 0.9, &ys).unwrap();
        let pf = bootstrap_means(0.9, 1.0, 1.0, &ys, 1_000_000, 5);
        for (n, (k, p)) in kf.means.iter().zip(&pf).enumerate() {
            let scale = k[0].abs().max(kf.covs[n][(0, 0)].sqrt());
            assert!((k[0] - p).abs() <= 0.01 * scale, "step {n}: {} vs {p}", k[0]);
        }
    }

    #[test]
    fn flat_likelihood_gives_uniform_weights() {
        // H = 0: observations carry no information about theta.
        let mut m = LinearGaussianModel::scalar_ar1(1.0, 1.0, 0.0, 1.0);
        m.h = DMatrix::zeros(1, 1);
        let grid = uniform_grid(0.0, 1.0, 128).unwrap();
        let post = grid_posterior(&grid, &m, &obs(&[0.3, -1.0, 2.0])).unwrap();
        for w in &post.weights {
            assert!((w - 1.0 / 128.0).abs() < 1e-14);
        }
        let single = grid_posterior(&[0.5], &m, &obs(&[0.3])).unwrap();
        assert_eq!(single.weights, vec![1.0]);
    }

    #[test]
    fn grid_argmax_recovers_transition_coefficient() {
        let m = LinearGaussianModel::scalar_ar1(1.0, 0.25, 0.0, 1.0);
        let (_, ys) = m.simulate(0.9, 200, &mut stream(11, Purpose::Truth, &[])).unwrap();
        let post = grid_posterior(&uniform_grid(0.0, 1.2, DEFAULT_GRID_SIZE).unwrap(), &m, &ys).unwrap();
        assert!((post.argmax() - 0.9).abs() <= 0.05, "{}", post.argmax());
    }

    #[test]
    fn grid_refinement_moves_mean_less_than_spacing() {
        let m = LinearGaussianModel::scalar_ar1(1.0, 0.25, 0.0, 1.0);
        let (_, ys) = m.simulate(0.7, 100, &mut stream(12, Purpose::Truth, &[])).unwrap();
        let coarse = grid_posterior(&uniform_grid(0.0, 1.2, 256).unwrap(), &m, &ys).unwrap();
        let fine = grid_posterior(&uniform_grid(0.0, 1.2, 512).unwrap(), &m, &ys).unwrap();
        assert!((coarse.mean() - fine.mean()).abs() < 1.2 / 256.0);
    }

    #[test]
    fn covariances_stay_symmetric_psd() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let m = LinearGaussianModel {
            a0: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]),
            a1: DMatrix::identity(2, 2),
            q: DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]),
            h: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            r: DMatrix::from_element(1, 1, 0.4),
            prior_mean: DVector::zeros(2),
            prior_cov: p,
        };
        let (_, ys) = m.simulate(0.4, 60, &mut stream(1, Purpose::Truth, &[])).unwrap();
        for c in kalman_filter(&m, 0.4, &ys).unwrap().covs {
            assert_eq!(c, c.transpose());
            assert!(c.symmetric_eigenvalues().min() >= -1e-12);
        }
    }

    proptest! {
        #[test]
        fn grid_weights_normalized_and_shift_invariant(ll in prop::collection::vec(-50.0f64..50.0, 1..40), shift in -1e3f64..1e3) {
            let grid: Vec<f64> = (0..ll.len()).map(|i| i as f64).collect();
            let a = grid_posterior_from_log_likelihoods(&grid, &ll, None).unwrap();
            let shifted: Vec<f64> = ll.iter().map(|v| v + shift).collect();
            let b = grid_posterior_from_log_likelihoods(&grid, &shifted, None).unwrap();
            prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
