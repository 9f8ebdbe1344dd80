//! State-space models: drift fields, stochastic integrators, the linear
//! selection observation operator and ground-truth generation for the
//! two-scale Lorenz 96 benchmark.

mod integrate;
mod io;
mod lorenz;
mod truth;

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{NhfError, Result};

pub use integrate::{
    euler_maruyama_step, propagate_deterministic, propagate_m_steps, rk4_sde_step, NoiseScale, Rk4Stepper,
    TangentPropagator, RK4_NOISE_VARIANCE_FACTOR,
};
pub use io::{read_binary, read_csv, write_binary, write_csv};
pub use lorenz::{
    ansatz_drift, lorenz96_two_scale_drift, AnsatzLorenz, AnsatzParams, FastRing, TwoScaleLorenz, TwoScaleLorenzParams,
};
pub use truth::{generate_ground_truth, GroundTruth, TruthConfig};

/// A deterministic vector field `f(x, theta)`.
///
/// The stochastic perturbation of the SDE is applied by the integrators, not
/// here.
pub trait DriftField: Send + Sync {
    /// State dimension.
    fn dim(&self) -> usize;

    /// Parameter dimension.
    fn param_dim(&self) -> usize;

    /// Writes `f(x, theta)` into `out`.
    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// Writes `J(x, theta) * v` into `out`, where `J` is the Jacobian of the
    /// field with respect to the state and `v` has `dim()` rows.
    ///
    /// The default uses central finite differences with step
    /// `1e-6 * (1 + |x_j|)`.
    fn jacobian_mul(&self, x: &[f64], theta: &[f64], v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let jac = finite_difference_jacobian(self, x, theta);
        out.gemm(1.0, &jac, v, 0.0);
    }
}

/// Dense central-difference Jacobian of a drift field.
pub fn finite_difference_jacobian<D: DriftField + ?Sized>(drift: &D, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let d = drift.dim();
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for k in 0..d {
        let step = 1e-6 * (1.0 + x[k].abs());
        xp[k] = x[k] + step;
        drift.eval(&xp, theta, &mut fp);
        xp[k] = x[k] - step;
        drift.eval(&xp, theta, &mut fm);
        xp[k] = x[k];
        for j in 0..d {
            jac[(j, k)] = (fp[j] - fm[j]) / (2.0 * step);
        }
    }
    jac
}

/// Wraps a closure as a drift field. Handy for small test models.
pub struct FnDrift<F> {
    dim: usize,
    param_dim: usize,
    f: F,
}

impl<F> FnDrift<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, param_dim: usize, f: F) -> Self {
        Self { dim, param_dim, f }
    }
}

impl<F> DriftField for FnDrift<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (self.f)(x, theta, out)
    }
}

/// Linear drift `f(x) = A x`, independent of the parameters. Its Jacobian is
/// exact, which makes it the reference model for EKF/Kalman equivalence tests.
#[derive(Debug, Clone)]
pub struct LinearDrift {
    pub a: DMatrix<f64>,
    pub param_dim: usize,
}

impl DriftField for LinearDrift {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn eval(&self, x: &[f64], _theta: &[f64], out: &mut [f64]) {
        let d = self.a.nrows();
        for (j, o) in out.iter_mut().enumerate().take(d) {
            *o = (0..d).map(|k| self.a[(j, k)] * x[k]).sum();
        }
    }

    fn jacobian_mul(&self, _x: &[f64], _theta: &[f64], v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        out.gemm(1.0, &self.a, v, 0.0);
    }
}

/// Discrete-time model: an SDE discretised with step `h`, observed every `m`
/// integration steps through the selection of one out of every `k` state
/// components.
#[derive(Clone)]
pub struct StateSpaceModel {
    pub drift: Arc<dyn DriftField>,
    /// State-noise scale.
    pub sigma: f64,
    /// Observation-noise standard deviation.
    pub sigma_o: f64,
    /// Integration step.
    pub h: f64,
    /// Integration steps per observation.
    pub m: usize,
    /// Observation decimation: one of every `k` components is observed.
    pub k: usize,
}

impl std::fmt::Debug for StateSpaceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateSpaceModel")
            .field("d_x", &self.d_x())
            .field("d_theta", &self.d_theta())
            .field("sigma", &self.sigma)
            .field("sigma_o", &self.sigma_o)
            .field("h", &self.h)
            .field("m", &self.m)
            .field("k", &self.k)
            .finish()
    }
}

impl StateSpaceModel {
    pub fn new(drift: Arc<dyn DriftField>, sigma: f64, sigma_o: f64, h: f64, m: usize, k: usize) -> Result<Self> {
        if !(h > 0.0) {
            return Err(NhfError::invalid("integration step h must be positive"));
        }
        if m == 0 {
            return Err(NhfError::invalid("m must be at least 1"));
        }
        if k == 0 || k > drift.dim() {
            return Err(NhfError::invalid(format!(
                "observation decimation K={k} must lie in 1..={}",
                drift.dim()
            )));
        }
        if !(sigma >= 0.0) || !(sigma_o >= 0.0) {
            return Err(NhfError::invalid("noise scales must be non-negative"));
        }
        Ok(Self {
            drift,
            sigma,
            sigma_o,
            h,
            m,
            k,
        })
    }

    pub fn d_x(&self) -> usize {
        self.drift.dim()
    }

    pub fn d_theta(&self) -> usize {
        self.drift.param_dim()
    }

    pub fn d_y(&self) -> usize {
        self.d_x() / self.k
    }

    /// State indices picked by the observation operator.
    pub fn observed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        observed_indices(self.d_x(), self.k)
    }

    /// `g(x)`: the noiseless linear selection.
    pub fn select(&self, x: &[f64], out: &mut [f64]) {
        for (o, j) in out.iter_mut().zip(self.observed_indices()) {
            *o = x[j];
        }
    }
}

/// Components `K-1, 2K-1, ...` (0-based) of a `d_x`-vector.
pub fn observed_indices(d_x: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..d_x / k).map(move |i| (i + 1) * k - 1)
}

/// `y_i = x_{(i+1)K-1} + r_i`.
pub fn observe(x: &[f64], model: &StateSpaceModel, r: &[f64]) -> Result<Vec<f64>> {
    observe_selection(x, model.k, r)
}

/// Selection observation for an explicit decimation factor.
pub fn observe_selection(x: &[f64], k: usize, r: &[f64]) -> Result<Vec<f64>> {
    if k == 0 || k > x.len() {
        return Err(NhfError::invalid(format!(
            "observation decimation K={k} exceeds state dimension {}",
            x.len()
        )));
    }
    let d_y = x.len() / k;
    crate::error::check_len("observation noise", d_y, r.len())?;
    Ok(observed_indices(x.len(), k).zip(r).map(|(j, ri)| x[j] + ri).collect())
}

/// Discrete trajectory of the system.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Trajectory {
    pub times: Vec<u64>,
    pub slow_states: Vec<Vec<f64>>,
    pub fast_states: Option<Vec<Vec<f64>>>,
}

/// Observation sequence; `steps[n]` is the integration step index of `values[n]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Observations {
    pub steps: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
