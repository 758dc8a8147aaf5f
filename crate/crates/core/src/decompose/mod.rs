//! Fitting drivers: alternating least squares (full and masked data) and the
//! loop that interleaves fitting with sensitivity correction.

mod als;
mod control;
mod init;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stabilize::CorrectionConfig;

pub use als::{als_fit, als_step, masked_als_fit, masked_als_step};
pub use control::{fit_with_ss_control, fit_with_ss_control_masked};
pub use init::{gaussian_model, init_model, InitScheme};

/// When corrections run during a controlled fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorrectionSchedule {
    /// After the listed fitting iterations (1-based sweep counts).
    At(Vec<usize>),
    /// `"trigger"`: whenever the sensitivity reaches `ss_max` or the error
    /// stalls.
    Trigger(TriggerTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerTag {
    Trigger,
}

impl CorrectionSchedule {
    pub fn trigger() -> Self {
        Self::Trigger(TriggerTag::Trigger)
    }
}

impl Default for CorrectionSchedule {
    fn default() -> Self {
        Self::trigger()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Fitting sweeps (one sweep updates every core once).
    pub max_iters: usize,
    /// Stop once the relative error is at or below this value.
    pub rel_err_tol: f64,
    /// Minimum relative error decrease over `stall_window` sweeps.
    pub stall_tol: f64,
    pub stall_window: usize,
    /// Sensitivity level that triggers a correction.
    pub ss_max: f64,
    pub seed: u64,
    pub init_scheme: InitScheme,
    /// Treat NaN entries of the data as missing.
    pub masked: bool,
    pub correction_schedule: CorrectionSchedule,
    /// Upper limit on triggered corrections in one fit.
    pub max_corrections: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            rel_err_tol: 1e-6,
            stall_tol: 1e-8,
            stall_window: 100,
            ss_max: 1e7,
            seed: 0,
            init_scheme: InitScheme::Gaussian,
            masked: false,
            correction_schedule: CorrectionSchedule::default(),
            max_corrections: 20,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_err_tol > 0.0) || !(self.stall_tol > 0.0) {
            return invalid("rel_err_tol and stall_tol must be positive");
        }
        if !(self.ss_max > 0.0) {
            return invalid("ss_max must be positive");
        }
        if self.stall_window == 0 {
            return invalid("stall_window must be positive");
        }
        Ok(())
    }
}

/// Fit and correction settings as read from a JSON config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub fit: FitConfig,
    pub correction: CorrectionConfig,
}
