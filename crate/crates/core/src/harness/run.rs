//! Single experiment runs: truth generation, the nested filter, and metrics.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InnerKind};
use crate::error::{check_len, Result};
use crate::inner::{BpfFilter, EkfFilter, EnkfFilter, InnerFilter, StatePrior};
use crate::model::{generate_ground_truth, propagate_deterministic, AnsatzLorenz, GroundTruth, StateSpaceModel};
use crate::outer::{NestedFilter, PosteriorSummary, StepContext};
use crate::rng::{repetition_seed, stream, Purpose};

/// `(1/d_x) ||truth - estimate||^2`.
pub fn mse_per_dim(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len("MSE estimate", truth.len(), estimate.len())?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ss / truth.len() as f64)
}

/// MSE at one observation instant. Non-finite errors are reported as
/// `mse: None` with `diverged: true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    /// Observation index, starting at 1.
    pub n: u64,
    /// Integration step of the observation.
    pub step: u64,
    pub mse: Option<f64>,
    pub diverged: bool,
}

/// The full parameter cloud at one observation instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSnapshot {
    pub n: u64,
    pub time: f64,
    pub thetas: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Weighted state predictor at an integration step between observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediatePoint {
    pub step: u64,
    pub predictor: Vec<f64>,
    pub mse: Option<f64>,
}

/// Everything recorded by one run. The wall time is kept out of the
/// serialized form so that equal seeds give byte-identical reports; it is
/// written to a separate timing file by [`super::emit_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_echo: ExperimentConfig,
    pub mse_time_series: Vec<MsePoint>,
    /// Mean over the finite entries of the MSE series.
    pub mse_mean: Option<f64>,
    pub theta_trace: Vec<PosteriorSummary>,
    pub snapshots: Vec<ParticleSnapshot>,
    pub intermediate: Vec<IntermediatePoint>,
    pub diverged: bool,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl RunReport {
    fn empty(cfg: &ExperimentConfig) -> Self {
        Self {
            config_echo: cfg.clone(),
            mse_time_series: Vec::new(),
            mse_mean: None,
            theta_trace: Vec::new(),
            snapshots: Vec::new(),
            intermediate: Vec::new(),
            diverged: false,
            warnings: Vec::new(),
            wall_time_seconds: 0.0,
        }
    }

    /// Posterior summary at the last observation at or before `time`.
    pub fn summary_at(&self, time: f64) -> Option<&PosteriorSummary> {
        let gap = self.config_echo.observation_gap();
        self.theta_trace
            .iter()
            .take_while(|s| s.step as f64 * gap <= time + 1e-9)
            .last()
    }
}

/// The forecast model: slow variables with the quadratic ansatz.
pub fn forecast_model(cfg: &ExperimentConfig) -> Result<StateSpaceModel> {
    let m = &cfg.model;
    StateSpaceModel::new(Arc::new(AnsatzLorenz::new(m.d_x)?), m.sigma, m.sigma_o, m.h, m.m, m.k)
}

/// Initial state belief: mean `x0 + s e` with one shared `e ~ N(0, I)`,
/// covariance `s^2 I`.
pub fn initial_state_prior(cfg: &ExperimentConfig, truth: &GroundTruth) -> StatePrior {
    let s = cfg.filter.state_prior_std;
    let mut rng = stream(cfg.run.seed, Purpose::StatePrior, &[u64::MAX]);
    let mean = truth.trajectory.slow_states[0]
        .iter()
        .map(|x| x + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    StatePrior { mean, std: s }
}

/// Config for repetition `rep`: a derived seed and a single repetition.
pub fn repetition_config(cfg: &ExperimentConfig, rep: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.run.seed = repetition_seed(cfg.run.seed, rep);
    c.run.repetitions = 1;
    c
}

/// Runs the configured nested filter once, with `run.seed`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let n_obs = cfg.n_observations();
    let truth = generate_ground_truth(&cfg.model, n_obs * cfg.model.m as u64, cfg.run.seed)?;
    let model = forecast_model(cfg)?;
    let mut report = match cfg.filter.inner {
        InnerKind::Ekf => drive(cfg, &truth, EkfFilter::new(model.clone()), &model)?,
        InnerKind::Enkf => drive(
            cfg,
            &truth,
            EnkfFilter::new(model.clone(), cfg.filter.members, cfg.filter.enkf)?,
            &model,
        )?,
        InnerKind::Bpf => drive(cfg, &truth, BpfFilter::new(model.clone(), cfg.filter.members)?, &model)?,
    };
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs `run.repetitions` independent repetitions with derived seeds.
pub fn run_repetitions(cfg: &ExperimentConfig) -> Result<Vec<RunReport>> {
    (0..cfg.run.repetitions as u64)
        .map(|r| run_experiment(&repetition_config(cfg, r)))
        .collect()
}

fn drive<F: InnerFilter>(
    cfg: &ExperimentConfig,
    truth: &GroundTruth,
    filter: F,
    model: &StateSpaceModel,
) -> Result<RunReport> {
    let mut report = RunReport::empty(cfg);
    let ctx = StepContext {
        seed: cfg.run.seed,
        kernel: cfg.jitter_kernel()?,
        prior: cfg.prior_box()?,
        keying: cfg.filter.keying,
        ess_threshold: cfg.filter.ess_threshold,
    };
    let state_prior = initial_state_prior(cfg, truth);
    let mut nf = NestedFilter::new(filter, cfg.filter.outer, cfg.filter.n, ctx, cfg.psi(), &state_prior)?;
    let gap = cfg.observation_gap();
    let m = cfg.model.m as u64;
    let mut finite = Vec::new();

    for (idx, y) in truth.observations.values.iter().enumerate() {
        let n = idx as u64 + 1;
        if cfg.run.export_intermediate {
            export_intermediate(&nf, model, truth, (n - 1) * m, &mut report)?;
        }
        let step_report = nf.step(y)?;
        let mut summary = step_report.summary;
        let step = truth.observations.steps[idx];
        let mse = mse_per_dim(&truth.trajectory.slow_states[step as usize], &summary.state_predictor)?;
        let ok = mse.is_finite();
        if ok {
            finite.push(mse);
        } else {
            report.diverged = true;
        }
        if summary.diverged_particles > 0 {
            report.warnings.push(format!(
                "step {n}: {} particle filters diverged",
                summary.diverged_particles
            ));
        }
        report.warnings.append(&mut summary.warnings);
        summary.mse_per_dim = ok.then_some(mse);
        if !summary.state_predictor.iter().all(|v| v.is_finite()) {
            // never emit NaN: the flag carries the information
            summary.state_predictor.clear();
        }
        report.mse_time_series.push(MsePoint {
            n,
            step,
            mse: ok.then_some(mse),
            diverged: !ok,
        });
        let time = n as f64 * gap;
        if cfg.run.snapshot_times.iter().any(|t| (t - time).abs() < 0.5 * gap) {
            report.snapshots.push(ParticleSnapshot {
                n,
                time,
                thetas: step_report.thetas,
                weights: step_report.weights,
            });
        }
        report.theta_trace.push(summary);
    }
    report.mse_mean = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
    Ok(report)
}

/// Weighted predictor at steps `from + 1 .. from + m - 1`, propagating each
/// particle's state mean under its own parameters without noise.
fn export_intermediate<F: InnerFilter>(
    nf: &NestedFilter<F>,
    model: &StateSpaceModel,
    truth: &GroundTruth,
    from: u64,
    report: &mut RunReport,
) -> Result<()> {
    let cloud = &nf.cloud;
    let mut states: Vec<Vec<f64>> = cloud.beliefs.iter().map(|b| nf.filter.mean(b)).collect();
    for k in 1..model.m as u64 {
        let mut predictor = vec![0.0; model.d_x()];
        for ((x, theta), w) in states.iter_mut().zip(&cloud.thetas).zip(&cloud.weights) {
            *x = propagate_deterministic(x, model.drift.as_ref(), theta, model.h, 1);
            for (p, v) in predictor.iter_mut().zip(x.iter()) {
                *p += w * v;
            }
        }
        let step = from + k;
        let mse = mse_per_dim(&truth.trajectory.slow_states[step as usize], &predictor)?;
        let ok = mse.is_finite();
        report.intermediate.push(IntermediatePoint {
            step,
            predictor: if ok { predictor } else { Vec::new() },
            mse: ok.then_some(mse),
        });
    }
    Ok(())
}
