//! Sweeps over `N`, `d_x` or the observation gap `m`.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{repetition_config, run_experiment, RunReport};
use crate::error::{NhfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Parameter particles.
    N,
    /// Slow-state dimension; the ensemble size follows it.
    Dx,
    /// Integration steps between observations.
    M,
}

impl std::str::FromStr for SweepAxis {
    type Err = NhfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(Self::N),
            "dx" | "d_x" => Ok(Self::Dx),
            "m" => Ok(Self::M),
            other => Err(NhfError::invalid(format!(
                "unknown sweep axis `{other}` (expected n, dx or m)"
            ))),
        }
    }
}

/// Result of one repetition inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub seed: u64,
    pub mse_mean: Option<f64>,
    pub diverged: bool,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

/// Aggregate over the repetitions at one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    /// Mean and standard deviation of the per-run mean MSE over the runs
    /// that produced one.
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub runs: Vec<SweepRun>,
    #[serde(skip)]
    pub wall_time_mean: f64,
    #[serde(skip)]
    pub wall_time_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub template: ExperimentConfig,
    pub points: Vec<SweepPoint>,
}

/// Sample mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Applies an axis value to a config.
pub fn with_axis_value(template: &ExperimentConfig, axis: SweepAxis, value: usize) -> ExperimentConfig {
    let mut cfg = template.clone();
    match axis {
        SweepAxis::N => cfg.filter.n = value,
        SweepAxis::Dx => {
            cfg.model.d_x = value;
            cfg.filter.members = value;
        }
        SweepAxis::M => cfg.model.m = value,
    }
    cfg
}

/// Aggregates a set of runs at one axis value.
pub fn aggregate(value: usize, reports: &[RunReport]) -> SweepPoint {
    let runs: Vec<SweepRun> = reports
        .iter()
        .map(|r| SweepRun {
            seed: r.config_echo.run.seed,
            mse_mean: r.mse_mean,
            diverged: r.diverged,
            wall_time_seconds: r.wall_time_seconds,
        })
        .collect();
    let mses: Vec<f64> = runs.iter().filter_map(|r| r.mse_mean).collect();
    let walls: Vec<f64> = runs.iter().map(|r| r.wall_time_seconds).collect();
    let (mse_mean, mse_std) = mean_std(&mses).unzip();
    let (wall_time_mean, wall_time_std) = mean_std(&walls).unwrap_or((0.0, 0.0));
    SweepPoint {
        value,
        mse_mean,
        mse_std,
        runs,
        wall_time_mean,
        wall_time_std,
    }
}

/// Runs `repetitions` seeds per value. `on_run` sees every finished run, so
/// callers can persist them as they arrive.
pub fn sweep(
    template: &ExperimentConfig,
    axis: SweepAxis,
    values: &[usize],
    repetitions: usize,
    mut on_run: impl FnMut(usize, &RunReport) -> Result<()>,
) -> Result<SweepReport> {
    if values.is_empty() || repetitions == 0 {
        return Err(NhfError::invalid("sweep needs at least one value and one repetition"));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = with_axis_value(template, axis, value);
        cfg.validate()?;
        let mut reports = Vec::with_capacity(repetitions);
        for rep in 0..repetitions as u64 {
            let r = run_experiment(&repetition_config(&cfg, rep))?;
            on_run(value, &r)?;
            reports.push(r);
        }
        points.push(aggregate(value, &reports));
    }
    Ok(SweepReport {
        axis,
        template: template.clone(),
        points,
    })
}
