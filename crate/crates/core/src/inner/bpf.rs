//! Bootstrap particle filter over the state.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{sample_gaussian, FilterDims, GaussianBelief, InnerFilter, LikelihoodEstimate, StatePrior, StepOutcome};
use crate::error::{check_len, NhfError, Result};
use crate::model::{NoiseScale, Rk4Stepper, StateSpaceModel};
use crate::outer::multinomial_resample;
use crate::rng::StreamRng;
use crate::stats::{isotropic_log_pdf, log_sum_exp, normalize_log_weights};

/// Weighted particle cloud; the columns of `particles` are the states.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBelief {
    pub particles: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl ParticleBelief {
    pub fn uniform(particles: DMatrix<f64>) -> Self {
        let m = particles.ncols();
        Self {
            particles,
            weights: vec![1.0 / m as f64; m],
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.particles.nrows());
        for (c, w) in self.particles.column_iter().zip(&self.weights) {
            out.axpy(*w, &c, 1.0);
        }
        out
    }
}

/// Propagate, weight by `N(y | g(x), sigma_o^2 I)`, resample multinomially.
///
/// The likelihood estimate is `log( (1/M) sum_j p(y | x_j) )`, which is
/// `-inf` when every particle has zero likelihood; the returned weights are
/// then uniform over the propagated particles.
pub fn bpf_step<R: Rng + ?Sized>(
    belief: &ParticleBelief,
    theta: &[f64],
    y: &[f64],
    model: &StateSpaceModel,
    rng: &mut R,
) -> Result<(ParticleBelief, LikelihoodEstimate)> {
    let d = model.d_x();
    let d_y = model.d_y();
    let m = belief.particles.ncols();
    if m < 2 {
        return Err(NhfError::invalid("particle filter needs at least 2 particles"));
    }
    check_len("particle rows", d, belief.particles.nrows())?;
    check_len("particle weights", m, belief.weights.len())?;
    check_len("observation", d_y, y.len())?;

    let mut particles = belief.particles.clone();
    let mut stepper = Rk4Stepper::new(d);
    let scale = NoiseScale::Uniform(model.sigma);
    let drift = model.drift.as_ref();
    for col in particles.as_mut_slice().chunks_exact_mut(d) {
        for _ in 0..model.m {
            stepper.step(drift, col, theta, model.h, scale, rng);
        }
    }

    let var = model.sigma_o * model.sigma_o;
    let mut g = vec![0.0; d_y];
    let log_w: Vec<f64> = particles
        .column_iter()
        .map(|c| {
            if c.iter().any(|v| !v.is_finite()) {
                return f64::NEG_INFINITY;
            }
            for (gi, j) in g.iter_mut().zip(model.observed_indices()) {
                *gi = c[j];
            }
            let v = isotropic_log_pdf(y, &g, var);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect();
    let log_value = log_sum_exp(&log_w) - (m as f64).ln();

    let predicted = sample_gaussian(&particles.select_rows(&model.observed_indices().collect::<Vec<_>>()));
    let mut s = predicted.cov;
    for i in 0..d_y {
        s[(i, i)] += var;
    }
    let estimate = LikelihoodEstimate {
        log_value,
        predicted_obs_mean: predicted.mean,
        predicted_obs_cov: s,
    };

    let Some(weights) = normalize_log_weights(&log_w) else {
        return Ok((ParticleBelief::uniform(particles), estimate));
    };
    let idx = multinomial_resample(&weights, rng);
    let resampled = particles.select_columns(&idx);
    Ok((ParticleBelief::uniform(resampled), estimate))
}

/// Bootstrap particle filter as an inner filter.
#[derive(Debug, Clone)]
pub struct BpfFilter {
    pub model: StateSpaceModel,
    pub particles: usize,
}

impl BpfFilter {
    pub fn new(model: StateSpaceModel, particles: usize) -> Result<Self> {
        if particles < 2 {
            return Err(NhfError::invalid("particle filter needs at least 2 particles"));
        }
        Ok(Self { model, particles })
    }
}

impl InnerFilter for BpfFilter {
    type Belief = ParticleBelief;

    fn dims(&self) -> FilterDims {
        FilterDims::of(&self.model)
    }

    fn init(&self, prior: &StatePrior, rng: &mut StreamRng) -> ParticleBelief {
        let d = prior.mean.len();
        ParticleBelief::uniform(DMatrix::from_fn(d, self.particles, |i, _| {
            prior.mean[i] + prior.std * rng.sample::<f64, _>(StandardNormal)
        }))
    }

    fn step(&self, belief: &mut ParticleBelief, theta: &[f64], y: &[f64], rng: &mut StreamRng) -> StepOutcome {
        match bpf_step(belief, theta, y, &self.model, rng) {
            Ok((next, lik)) => {
                let failed = lik.log_value == f64::NEG_INFINITY;
                *belief = next;
                if failed {
                    StepOutcome::failed()
                } else {
                    StepOutcome::ok(lik.log_value)
                }
            }
            Err(_) => StepOutcome::failed(),
        }
    }

    fn mean(&self, belief: &ParticleBelief) -> Vec<f64> {
        belief.mean().iter().copied().collect()
    }

    fn gaussian(&self, belief: &ParticleBelief) -> GaussianBelief {
        sample_gaussian(&belief.particles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::test_models::linear;
    use crate::rng::{stream, Purpose};

    #[test]
    fn single_particle_is_rejected() {
        let model = linear(DMatrix::zeros(1, 1), 0.0, 1.0, 0.1, 1, 1);
        let b = ParticleBelief::uniform(DMatrix::zeros(1, 1));
        assert!(bpf_step(&b, &[0.0], &[0.0], &model, &mut stream(1, Purpose::Particle, &[])).is_err());
        assert!(BpfFilter::new(model, 1).is_err());
    }

    #[test]
    fn identical_deterministic_particles_give_exact_likelihood() {
        let model = linear(DMatrix::from_element(2, 2, 0.0), 0.0, 2.0, 0.1, 2, 1);
        let b = ParticleBelief::uniform(DMatrix::from_fn(2, 5, |i, _| i as f64 + 1.0));
        let (_, lik) = bpf_step(&b, &[0.0], &[0.5, 3.0], &model, &mut stream(1, Purpose::Particle, &[])).unwrap();
        let want = isotropic_log_pdf(&[0.5, 3.0], &[1.0, 2.0], 4.0);
        assert!((lik.log_value - want).abs() < 1e-13);
    }

    #[test]
    fn likelihood_matches_kalman_on_average() {
        // x ~ N(0, 1), x' = phi x, y = x' + N(0, 1)
        let h = 0.1;
        let model = linear(DMatrix::from_element(1, 1, -0.5), 0.0, 1.0, h, 1, 1);
        let z: f64 = -0.5 * h;
        let phi = 1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0;
        let y = 0.7;
        let exact = isotropic_log_pdf(&[y], &[0.0], phi * phi + 1.0).exp();
        let mut rng = stream(21, Purpose::Particle, &[]);
        let trials = 100;
        let mut acc = 0.0;
        for _ in 0..trials {
            let b = ParticleBelief::uniform(DMatrix::from_fn(1, 10_000, |_, _| rng.sample::<f64, _>(StandardNormal)));
            let (_, lik) = bpf_step(&b, &[0.0], &[y], &model, &mut rng).unwrap();
            acc += lik.log_value.exp();
        }
        let avg = acc / trials as f64;
        assert!((avg - exact).abs() < 0.05 * exact, "{avg} vs {exact}");
    }

    #[test]
    fn all_zero_weights_fall_back_to_uniform() {
        let model = linear(DMatrix::zeros(1, 1), 0.0, 1.0, 0.1, 1, 1);
        let b = ParticleBelief::uniform(DMatrix::from_element(1, 3, f64::NAN));
        let (next, lik) = bpf_step(&b, &[0.0], &[0.0], &model, &mut stream(1, Purpose::Particle, &[])).unwrap();
        assert_eq!(lik.log_value, f64::NEG_INFINITY);
        assert_eq!(next.weights, vec![1.0 / 3.0; 3]);
    }
}
