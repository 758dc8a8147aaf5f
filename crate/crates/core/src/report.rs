use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Stalled,
    MaxIters,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    Sensitivity,
    Intensity,
    Rotation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    /// Fitting iteration after which the correction ran.
    pub iteration: usize,
    pub kind: CorrectionKind,
    pub ss_before: f64,
    pub ss_after: f64,
    pub error_before: f64,
    pub error_after: f64,
}

/// Trajectories of a fit or a correction run. One entry per iteration
/// (fitting sweep or correction sweep), index 0 being the starting model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub relative_error: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub intensity: Vec<f64>,
    pub correction_events: Vec<CorrectionEvent>,
    pub termination: Option<Termination>,
    pub wall_time: f64,
    /// Number of least-squares solves that needed the ridge fallback.
    pub ridge_fallbacks: usize,
    pub warnings: Vec<String>,
}

impl DecompositionReport {
    pub fn push(&mut self, error: f64, sensitivity: f64, intensity: f64) {
        self.relative_error.push(error);
        self.sensitivity.push(sensitivity);
        self.intensity.push(intensity);
    }

    pub fn iterations(&self) -> usize {
        self.relative_error.len().saturating_sub(1)
    }

    pub fn final_error(&self) -> Option<f64> {
        self.relative_error.last().copied()
    }

    pub fn final_sensitivity(&self) -> Option<f64> {
        self.sensitivity.last().copied()
    }
}
