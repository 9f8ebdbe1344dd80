//! JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NhfError, Result};
use crate::inner::EnkfConfig;
use crate::model::TruthConfig;
use crate::outer::{JitterKernel, JitterMode, OuterKind, PriorBox, RngKeying};
use crate::qmc::{PsiConfig, PsiSpread};

/// Which state filter runs inside every parameter particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerKind {
    #[default]
    Ekf,
    Enkf,
    Bpf,
}

/// Jitter kernel settings; unset values fall back to the defaults of
/// [`JitterKernel::default_for`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    pub mode: JitterMode,
    /// Move probability in mixture mode (default `N^-1/2`).
    pub epsilon: Option<f64>,
    /// Jitter standard deviation as a fraction of each prior-box width.
    pub std_fraction: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            mode: JitterMode::Mixture,
            epsilon: None,
            std_fraction: 0.05,
        }
    }
}

/// Filter block: outer and inner schemes, particle counts, prior and tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub outer: OuterKind,
    pub inner: InnerKind,
    /// Parameter particles `N`.
    pub n: usize,
    /// Ensemble members (EnKF) or state particles (BPF) per parameter particle.
    pub members: usize,
    pub jitter: JitterConfig,
    /// `(lo, hi)` for `F`, `a1`, `a2`.
    pub prior_box: Vec<(f64, f64)>,
    pub enkf: EnkfConfig,
    pub keying: RngKeying,
    /// Optional ESS gate; `None` resamples at every step.
    pub ess_threshold: Option<f64>,
    pub psi_spread: PsiSpread,
    /// The filters start from `N(x0 + s e, s^2 I)` with `e ~ N(0, I)` drawn
    /// once per run and `x0` the true initial slow state.
    pub state_prior_std: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            outer: OuterKind::Smc,
            inner: InnerKind::Ekf,
            n: 100,
            members: 40,
            jitter: JitterConfig::default(),
            prior_box: DEFAULT_PRIOR_BOX.to_vec(),
            enkf: EnkfConfig::default(),
            keying: RngKeying::Slot,
            ess_threshold: None,
            psi_spread: PsiSpread::default(),
            state_prior_std: 1.0,
        }
    }
}

/// Default prior support for `(F, a1, a2)`.
pub const DEFAULT_PRIOR_BOX: [(f64, f64); 3] = [(4.0, 12.0), (-0.2, 0.2), (-1.0, 1.0)];

/// Run block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Assimilation window in time units.
    pub duration: f64,
    pub seed: u64,
    pub repetitions: usize,
    /// Times (in time units) at which the full parameter cloud is stored.
    pub snapshot_times: Vec<f64>,
    /// Also export the weighted state predictor at the steps between
    /// observation instants.
    pub export_intermediate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            duration: 40.0,
            seed: 0,
            repetitions: 10,
            snapshot_times: Vec::new(),
            export_intermediate: false,
        }
    }
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: TruthConfig,
    pub filter: FilterConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| NhfError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NhfError::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| NhfError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let f = &self.filter;
        if f.n == 0 {
            return Err(NhfError::Config("filter.n must be positive".into()));
        }
        if f.inner != InnerKind::Ekf && f.members < 2 {
            return Err(NhfError::Config("filter.members must be at least 2".into()));
        }
        if f.prior_box.len() != 3 {
            return Err(NhfError::Config(format!(
                "filter.prior_box needs 3 intervals (F, a1, a2), got {}",
                f.prior_box.len()
            )));
        }
        self.prior_box()?;
        self.jitter_kernel()?;
        if !(f.state_prior_std >= 0.0) {
            return Err(NhfError::Config("filter.state_prior_std must be non-negative".into()));
        }
        if let Some(t) = f.ess_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(NhfError::Config("filter.ess_threshold must lie in [0, 1]".into()));
            }
        }
        if !(self.run.duration >= 0.0 && self.run.duration.is_finite()) {
            return Err(NhfError::Config("run.duration must be finite and non-negative".into()));
        }
        if self.run.repetitions == 0 {
            return Err(NhfError::Config("run.repetitions must be positive".into()));
        }
        Ok(())
    }

    pub fn prior_box(&self) -> Result<PriorBox> {
        PriorBox::new(&self.filter.prior_box)
    }

    pub fn jitter_kernel(&self) -> Result<JitterKernel> {
        let prior = self.prior_box()?;
        let n = self.filter.n;
        let j = &self.filter.jitter;
        let std = (0..prior.dim()).map(|k| j.std_fraction * prior.width(k)).collect();
        let epsilon = j.epsilon.unwrap_or(1.0 / (n as f64).sqrt());
        JitterKernel::new(j.mode, epsilon, std, n)
    }

    pub fn psi(&self) -> PsiConfig {
        PsiConfig {
            spread: self.filter.psi_spread,
            ..PsiConfig::default()
        }
    }

    /// Observation interval in time units.
    pub fn observation_gap(&self) -> f64 {
        self.model.h * self.model.m as f64
    }

    /// Number of observations assimilated in `run.duration`.
    pub fn n_observations(&self) -> u64 {
        (self.run.duration / self.observation_gap() + 1e-9).floor() as u64
    }
}
