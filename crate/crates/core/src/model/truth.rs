//! Reference trajectories of the two-scale model and their noisy observations.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::lorenz::{FastRing, TwoScaleLorenz, TwoScaleLorenzParams};
use super::{observed_indices, NoiseScale, Observations, Rk4Stepper, Trajectory};
use crate::error::{NhfError, Result};
use crate::rng::{stream, Purpose};

/// Everything needed to simulate the truth system and its observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub d_x: usize,
    /// Fast variables per slow variable.
    pub l: usize,
    /// Integration step.
    pub h: f64,
    /// Integration steps per observation.
    pub m: usize,
    /// Observation decimation.
    pub k: usize,
    /// Slow-noise scale.
    pub sigma: f64,
    /// Fast-noise scale.
    pub sigma_bar: f64,
    pub sigma_o: f64,
    pub forcing: f64,
    pub coupling: f64,
    pub time_scale: f64,
    pub amplitude: f64,
    pub fast_ring: FastRing,
    /// Time units integrated and discarded before step 0.
    pub spin_up: f64,
    /// Standard deviation of the initial perturbation around `F` (slow) and 0 (fast).
    pub initial_spread: f64,
    /// Keep the fast states in the returned trajectory.
    pub record_fast: bool,
}

impl Default for TruthConfig {
    fn default() -> Self {
        let h = 5e-3;
        Self {
            d_x: 40,
            l: 10,
            h,
            m: 10,
            k: 2,
            sigma: h / 4.0,
            sigma_bar: h / 4.0,
            sigma_o: 4.0,
            forcing: 8.0,
            coupling: 0.75,
            time_scale: 10.0,
            amplitude: 15.0,
            fast_ring: FastRing::Global,
            spin_up: 10.0,
            initial_spread: 0.1,
            record_fast: false,
        }
    }
}

impl TruthConfig {
    pub fn params(&self) -> TwoScaleLorenzParams {
        TwoScaleLorenzParams {
            f: self.forcing,
            c: self.time_scale,
            h: self.coupling,
            b: self.amplitude,
            d_x: self.d_x,
            l: self.l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        if !(self.h > 0.0) || self.m == 0 {
            return Err(NhfError::invalid("truth model needs h > 0 and m >= 1"));
        }
        if self.k == 0 || self.k > self.d_x {
            return Err(NhfError::invalid(format!("K={} must lie in 1..={}", self.k, self.d_x)));
        }
        if !(self.sigma >= 0.0 && self.sigma_bar >= 0.0 && self.sigma_o >= 0.0 && self.initial_spread >= 0.0) {
            return Err(NhfError::invalid("noise scales must be non-negative"));
        }
        if !(self.spin_up >= 0.0) {
            return Err(NhfError::invalid("spin-up must be non-negative"));
        }
        Ok(())
    }

    pub fn d_y(&self) -> usize {
        self.d_x / self.k
    }
}

/// Output of [`generate_ground_truth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trajectory: Trajectory,
    pub observations: Observations,
}

/// Integrates the two-scale model for `n_steps` steps after spin-up and
/// observes the slow variables every `m` steps.
///
/// `trajectory.times` runs `0..=n_steps`; observation `n` (1-based) is taken
/// at step `n m`.
pub fn generate_ground_truth(cfg: &TruthConfig, n_steps: u64, seed: u64) -> Result<GroundTruth> {
    cfg.validate()?;
    let d_x = cfg.d_x;
    let model = TwoScaleLorenz::new(d_x, cfg.l, cfg.fast_ring)?;
    let theta = TwoScaleLorenz::theta(&cfg.params());
    let dim = d_x * (1 + cfg.l);
    let mut rng = stream(seed, Purpose::Truth, &[]);

    let mut state = vec![0.0; dim];
    for (j, s) in state.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        let base = if j < d_x { cfg.forcing } else { 0.0 };
        *s = base + cfg.initial_spread * z;
    }

    let scale = NoiseScale::Blocks {
        split: d_x,
        first: cfg.sigma,
        second: cfg.sigma_bar,
    };
    let mut stepper = Rk4Stepper::new(dim);
    let spin_steps = (cfg.spin_up / cfg.h).round() as u64;
    for _ in 0..spin_steps {
        stepper.step(&model, &mut state, &theta, cfg.h, scale, &mut rng);
    }

    let len = n_steps as usize + 1;
    let mut times = Vec::with_capacity(len);
    let mut slow = Vec::with_capacity(len);
    let mut fast = cfg.record_fast.then(|| Vec::with_capacity(len));
    let mut obs_rng = stream(seed, Purpose::Observation, &[]);
    let mut obs = Observations {
        steps: Vec::new(),
        values: Vec::new(),
    };

    let record =
        |state: &[f64], k: u64, times: &mut Vec<u64>, slow: &mut Vec<Vec<f64>>, fast: &mut Option<Vec<Vec<f64>>>| {
            times.push(k);
            slow.push(state[..d_x].to_vec());
            if let Some(f) = fast.as_mut() {
                f.push(state[d_x..].to_vec());
            }
        };

    record(&state, 0, &mut times, &mut slow, &mut fast);
    for k in 1..=n_steps {
        stepper.step(&model, &mut state, &theta, cfg.h, scale, &mut rng);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(NhfError::invalid(format!(
                "truth integration became non-finite at step {k}"
            )));
        }
        record(&state, k, &mut times, &mut slow, &mut fast);
        if k % cfg.m as u64 == 0 {
            let y: Vec<f64> = observed_indices(d_x, cfg.k)
                .map(|j| {
                    let r: f64 = obs_rng.sample(StandardNormal);
                    state[j] + cfg.sigma_o * r
                })
                .collect();
            obs.steps.push(k);
            obs.values.push(y);
        }
    }

    Ok(GroundTruth {
        trajectory: Trajectory {
            times,
            slow_states: slow,
            fast_states: fast,
        },
        observations: obs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TruthConfig {
        TruthConfig {
            d_x: 8,
            l: 4,
            spin_up: 1.0,
            ..TruthConfig::default()
        }
    }

    #[test]
    fn zero_steps_gives_initial_state_only() {
        let gt = generate_ground_truth(&small(), 0, 1).unwrap();
        assert_eq!(gt.trajectory.times, vec![0]);
        assert_eq!(gt.trajectory.slow_states.len(), 1);
        assert!(gt.observations.is_empty());
    }

    #[test]
    fn observation_count_is_floor_of_steps_over_m() {
        let cfg = small();
        for n in [9u64, 10, 57, 100] {
            let gt = generate_ground_truth(&cfg, n, 3).unwrap();
            assert_eq!(gt.observations.len() as u64, n / cfg.m as u64);
            assert_eq!(gt.trajectory.slow_states.len() as u64, n + 1);
            for (i, s) in gt.observations.steps.iter().enumerate() {
                assert_eq!(*s, (i as u64 + 1) * cfg.m as u64);
                assert_eq!(gt.observations.values[i].len(), cfg.d_y());
            }
        }
    }

    #[test]
    fn truth_is_bit_reproducible() {
        let cfg = TruthConfig {
            record_fast: true,
            ..small()
        };
        let a = generate_ground_truth(&cfg, 50, 11).unwrap();
        let b = generate_ground_truth(&cfg, 50, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory.fast_states.as_ref().unwrap()[0].len(), 32);
        let c = generate_ground_truth(&cfg, 50, 12).unwrap();
        assert_ne!(a.trajectory.slow_states, c.trajectory.slow_states);
    }

    #[test]
    fn noiseless_observations_select_truth() {
        let cfg = TruthConfig {
            sigma_o: 0.0,
            ..small()
        };
        let gt = generate_ground_truth(&cfg, 20, 5).unwrap();
        let x = &gt.trajectory.slow_states[10];
        assert_eq!(gt.observations.values[0], vec![x[1], x[3], x[5], x[7]]);
    }

    #[test]
    fn default_config_stays_on_attractor() {
        let cfg = TruthConfig::default();
        let gt = generate_ground_truth(&cfg, 400, 2).unwrap();
        let last = gt.trajectory.slow_states.last().unwrap();
        assert!(last.iter().all(|v| v.is_finite() && v.abs() < 30.0));
    }
}
