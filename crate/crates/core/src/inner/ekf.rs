//! Extended Kalman filter with tangent-linear covariance propagation.

use nalgebra::{DMatrix, DVector};

use super::{FilterDims, GaussianBelief, InnerFilter, LikelihoodEstimate, StatePrior, StepOutcome};
use crate::error::{check_len, NhfError, Result};
use crate::model::{StateSpaceModel, TangentPropagator, RK4_NOISE_VARIANCE_FACTOR};
use crate::rng::StreamRng;
use crate::stats::LN_2PI;

/// Propagates the mean through `m` noiseless RK4 steps and the covariance
/// through the Jacobian `J` of that map: `P <- J P J^T + Q_eff`, with
/// `Q_eff = m (10/36) sigma^2 h I` the directly injected RK4 noise.
pub fn ekf_predict(belief: &GaussianBelief, theta: &[f64], model: &StateSpaceModel) -> Result<GaussianBelief> {
    let d = model.d_x();
    check_len("EKF mean", d, belief.mean.len())?;
    let drift = model.drift.as_ref();
    let mut x: Vec<f64> = belief.mean.iter().copied().collect();
    let mut jac = DMatrix::identity(d, d);
    let mut tangent = TangentPropagator::new(d, d);
    for _ in 0..model.m {
        tangent.step(drift, &mut x, theta, model.h, &mut jac);
    }
    let mut tmp = DMatrix::zeros(d, d);
    tmp.gemm(1.0, &jac, &belief.cov, 0.0);
    let mut cov = DMatrix::zeros(d, d);
    cov.gemm(1.0, &tmp, &jac.transpose(), 0.0);
    let q = model.m as f64 * RK4_NOISE_VARIANCE_FACTOR * model.sigma * model.sigma * model.h;
    for j in 0..d {
        cov[(j, j)] += q;
    }
    symmetrize(&mut cov);
    if x.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(NhfError::Diverged("non-finite EKF prediction".into()));
    }
    Ok(GaussianBelief {
        mean: DVector::from_vec(x),
        cov,
    })
}

/// Kalman update for the selection observation `y = x[obs] + r`.
pub fn ekf_update(
    belief: &GaussianBelief,
    y: &[f64],
    model: &StateSpaceModel,
) -> Result<(GaussianBelief, LikelihoodEstimate)> {
    let d = model.d_x();
    let d_y = model.d_y();
    check_len("EKF mean", d, belief.mean.len())?;
    check_len("observation", d_y, y.len())?;
    let obs: Vec<usize> = model.observed_indices().collect();
    let p = &belief.cov;
    // rows of P at the observed components: H P  (d_y x d)
    let hp = DMatrix::from_fn(d_y, d, |i, j| p[(obs[i], j)]);
    let mut s = DMatrix::from_fn(d_y, d_y, |i, j| hp[(i, obs[j])]);
    let r = model.sigma_o * model.sigma_o;
    for i in 0..d_y {
        s[(i, i)] += r;
    }
    symmetrize(&mut s);
    let chol = s
        .clone()
        .cholesky()
        .ok_or(NhfError::NotPositiveDefinite("innovation covariance"))?;
    let pred_obs = DVector::from_iterator(d_y, obs.iter().map(|&j| belief.mean[j]));
    let innov = DVector::from_column_slice(y) - &pred_obs;
    let s_inv_innov = chol.solve(&innov);
    let s_inv_hp = chol.solve(&hp);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_value = -0.5 * (d_y as f64 * LN_2PI + log_det + innov.dot(&s_inv_innov));

    // K = P H^T S^-1 = (S^-1 H P)^T
    let mean = &belief.mean + hp.tr_mul(&s_inv_innov);
    let mut cov = p - hp.tr_mul(&s_inv_hp);
    symmetrize(&mut cov);
    if !log_value.is_finite() || mean.iter().any(|v| !v.is_finite()) {
        return Err(NhfError::Diverged("non-finite EKF update".into()));
    }
    Ok((
        GaussianBelief { mean, cov },
        LikelihoodEstimate {
            log_value,
            predicted_obs_mean: pred_obs,
            predicted_obs_cov: s,
        },
    ))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// EKF as an inner filter.
#[derive(Debug, Clone)]
pub struct EkfFilter {
    pub model: StateSpaceModel,
}

impl EkfFilter {
    pub fn new(model: StateSpaceModel) -> Self {
        Self { model }
    }
}

impl InnerFilter for EkfFilter {
    type Belief = GaussianBelief;

    fn dims(&self) -> FilterDims {
        FilterDims::of(&self.model)
    }

    fn init(&self, prior: &StatePrior, _rng: &mut StreamRng) -> GaussianBelief {
        let d = prior.mean.len();
        GaussianBelief {
            mean: DVector::from_column_slice(&prior.mean),
            cov: DMatrix::from_diagonal_element(d, d, prior.std * prior.std),
        }
    }

    fn step(&self, belief: &mut GaussianBelief, theta: &[f64], y: &[f64], _rng: &mut StreamRng) -> StepOutcome {
        let Ok(pred) = ekf_predict(belief, theta, &self.model) else {
            return StepOutcome::failed();
        };
        match ekf_update(&pred, y, &self.model) {
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
    use crate::inner::test_models::linear;
    use crate::stats::gaussian_log_pdf;

    #[test]
    fn scalar_decay_prediction() {
        let model = linear(DMatrix::from_element(1, 1, -1.0), 0.0, 1.0, 0.1, 1, 1);
        let b = GaussianBelief::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 1.0));
        let p = ekf_predict(&b, &[0.0], &model).unwrap();
        let phi: f64 = 1.0 - 0.1 + 0.005 - 0.001 / 6.0 + 0.0001 / 24.0;
        assert!((p.mean[0] - phi).abs() < 1e-15);
        assert!((p.cov[(0, 0)] - phi * phi).abs() < 1e-14);
        assert!((p.cov[(0, 0)] - 0.81873).abs() < 1e-5);
    }

    #[test]
    fn zero_cov_zero_noise_stays_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -1.0, 0.0]);
        let model = linear(a, 0.0, 1.0, 0.05, 3, 1);
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::zeros(2, 2));
        assert_eq!(ekf_predict(&b, &[0.0], &model).unwrap().cov, DMatrix::zeros(2, 2));
    }

    #[test]
    fn linear_prediction_is_exact_transition() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.3, 1.0, -1.0, -0.1]);
        let model = linear(a.clone(), 0.0, 1.0, 0.05, 4, 1);
        let p0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, -1.0]), p0.clone());
        let out = ekf_predict(&b, &[0.0], &model).unwrap();
        // RK4 one-step matrix for linear drift
        let h = 0.05;
        let ha = &a * h;
        let i = DMatrix::<f64>::identity(2, 2);
        let step = &i + &ha + &ha * &ha / 2.0 + &ha * &ha * &ha / 6.0 + &ha * &ha * &ha * &ha / 24.0;
        let phi = &step * &step * &step * &step;
        let want = &phi * p0 * phi.transpose();
        assert!((out.cov - want).abs().max() < 1e-13);
    }

    #[test]
    fn scalar_update_example() {
        let model = linear(DMatrix::from_element(1, 1, 0.0), 0.0, 1.0, 0.1, 1, 1);
        let b = GaussianBelief::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0));
        let (post, lik) = ekf_update(&b, &[0.0], &model).unwrap();
        assert_eq!(post.mean[0], 0.0);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((lik.log_value.exp() - 0.282_094_791_773_878).abs() < 1e-12);
        assert!((lik.predicted_obs_cov[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_cov_update_keeps_prior() {
        let model = linear(DMatrix::zeros(4, 4), 0.0, 2.0, 0.1, 1, 2);
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]), DMatrix::zeros(4, 4));
        let (post, lik) = ekf_update(&b, &[0.0, 1.0], &model).unwrap();
        assert_eq!(post.mean, b.mean);
        let want = gaussian_log_pdf(
            &DVector::from_vec(vec![0.0, 1.0]),
            &DVector::from_vec(vec![2.0, 4.0]),
            &DMatrix::from_diagonal_element(2, 2, 4.0),
        )
        .unwrap();
        assert!((lik.log_value - want).abs() < 1e-12);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let model = linear(DMatrix::zeros(3, 3), 0.0, 0.5, 0.1, 1, 1);
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 3.0]);
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, -2.0, 0.5]), p);
        let (post, _) = ekf_update(&b, &[1.0, -2.0, 0.5], &model).unwrap();
        assert!((post.mean - b.mean).abs().max() < 1e-15);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let model = linear(DMatrix::zeros(2, 2), 0.0, 0.0, 0.1, 1, 1);
        let b = GaussianBelief::new(DVector::zeros(2), DMatrix::zeros(2, 2));
        assert!(ekf_update(&b, &[0.0, 0.0], &model).is_err());
        let f = EkfFilter::new(model);
        let mut belief = b.clone();
        let out = f.step(
            &mut belief,
            &[0.0],
            &[0.0, 0.0],
            &mut crate::rng::stream(0, crate::rng::Purpose::Particle, &[]),
        );
        assert!(out.diverged && out.log_likelihood == f64::NEG_INFINITY);
    }
}
