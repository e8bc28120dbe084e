//! Simulation configuration and its JSON file form.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{GprHyperparams, DEFAULT_WINDOW};
use crate::plant::DEFAULT_NOISE_VAR;
use crate::scheduler::{LyapunovParams, SchedulerKind, DEFAULT_WARMUP_SLOTS};
use crate::wireless::RadioParams;

pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub p_max: f64,
    /// Linear threshold; 4.0 is 6 dB.
    pub snr_th: f64,
    pub n0: f64,
    /// Estimator prior covariance; identity when absent.
    pub sigma_x: Option<Vec<Vec<f64>>>,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self { p_max: 10.0, snr_th: 4.0, n0: 1.0, sigma_x: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprConfig {
    pub h: f64,
    /// Length-scale in slots.
    pub lambda: f64,
    /// Defaults to `1e-6 h^2` when absent.
    pub jitter: Option<f64>,
    pub w_max: usize,
}

impl Default for GprConfig {
    fn default() -> Self {
        Self { h: 1.0, lambda: 20.0, jitter: None, w_max: DEFAULT_WINDOW }
    }
}

impl GprConfig {
    pub fn hyperparams(&self) -> GprHyperparams {
        let mut hp = GprHyperparams::new(self.h, self.lambda);
        if let Some(j) = self.jitter {
            hp.jitter = j;
        }
        hp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Number of control loops `M`.
    pub systems: usize,
    /// Slots per run (10 ms each).
    pub steps: u64,
    pub runs: usize,
    pub scheduler: SchedulerKind,
    pub predictor_enabled: bool,
    pub radio: RadioConfig,
    pub lyapunov: LyapunovParams,
    pub gpr: GprConfig,
    pub plant_noise_var: f64,
    pub master_seed: u64,
    pub warmup_slots: u64,
    pub initial_state: Vec<f64>,
    /// Any state component beyond this magnitude ends the run as diverged.
    pub divergence_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            systems: 30,
            steps: 12_000,
            runs: 100,
            scheduler: SchedulerKind::Proposed,
            predictor_enabled: true,
            radio: RadioConfig::default(),
            lyapunov: LyapunovParams::default(),
            gpr: GprConfig::default(),
            plant_noise_var: DEFAULT_NOISE_VAR,
            master_seed: 0,
            warmup_slots: DEFAULT_WARMUP_SLOTS,
            initial_state: vec![0.0, 0.0, 0.1, 0.0],
            divergence_threshold: 1e6,
        }
    }
}

impl SimConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(s).map_err(|e| Error::InvalidConfig(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json_str(&text)
    }

    /// Collects every schema violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive and finite, got {v}"));
            }
        };
        positive("radio.p_max", self.radio.p_max);
        positive("radio.snr_th", self.radio.snr_th);
        positive("radio.n0", self.radio.n0);
        positive("gpr.h", self.gpr.h);
        positive("gpr.lambda", self.gpr.lambda);
        positive("lyapunov.omega_beta", self.lyapunov.omega_beta);
        positive("lyapunov.omega_power", self.lyapunov.omega_power);
        positive("divergence_threshold", self.divergence_threshold);
        if self.systems < 1 {
            errs.push("systems must be at least 1".into());
        }
        if self.steps < 1 {
            errs.push("steps must be at least 1".into());
        }
        if self.runs < 1 {
            errs.push("runs must be at least 1".into());
        }
        if self.gpr.w_max < 1 {
            errs.push("gpr.w_max must be at least 1".into());
        }
        if matches!(self.gpr.jitter, Some(j) if !(j >= 0.0)) {
            errs.push("gpr.jitter must be non-negative".into());
        }
        if !(self.lyapunov.v_weight >= 0.0) {
            errs.push("lyapunov.v_weight must be non-negative".into());
        }
        if !(self.plant_noise_var >= 0.0) {
            errs.push("plant_noise_var must be non-negative".into());
        }
        if self.initial_state.len() != STATE_DIM || self.initial_state.iter().any(|v| !v.is_finite()) {
            errs.push(format!("initial_state must hold {STATE_DIM} finite values"));
        }
        if let Some(sx) = &self.radio.sigma_x {
            if sx.len() != STATE_DIM || sx.iter().any(|r| r.len() != STATE_DIM) {
                errs.push(format!("radio.sigma_x must be {STATE_DIM}x{STATE_DIM}"));
            } else {
                let m = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| sx[i][j]);
                let asym = (&m - m.transpose()).amax();
                if asym > 1e-9 || m.symmetric_eigen().eigenvalues.min() < -1e-9 {
                    errs.push("radio.sigma_x must be symmetric positive semidefinite".into());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    pub fn radio_params(&self) -> RadioParams {
        let sigma_x = match &self.radio.sigma_x {
            Some(sx) => DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| sx[i][j]),
            None => DMatrix::identity(STATE_DIM, STATE_DIM),
        };
        RadioParams { p_max: self.radio.p_max, snr_th: self.radio.snr_th, n0: self.radio.n0, sigma_x }
    }
}
