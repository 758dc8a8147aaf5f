//! Correction of fitted chain models: balanced scaling, bond rotations, and
//! alternating core updates that lower sensitivity or intensity while
//! keeping the fit within a prescribed error bound.

mod rotation;
mod scqp;
mod ssc;
mod stiefel;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use rotation::{
    apply_rotation, bond_terms, intensity_rotation_sweep, optimal_scales, rotate_pair,
    rotation_correct, rotation_matrices, rotation_sweep,
};
pub use scqp::{residual_sq as scqp_residual_sq, scqp_solve, ScqpProblem, ScqpSolution};
pub use ssc::{intensity_correct, sensitivity_form, ssc_correct, ssc_correct_masked};
pub use stiefel::{
    eigen_init, stiefel_gradient, stiefel_minimize, stiefel_objective, StiefelResult,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    /// Outer sweeps of the alternating correction (and of `rotation_correct`).
    pub max_sweeps: usize,
    pub stiefel_max_iters: usize,
    pub stiefel_grad_tol: f64,
    /// Relative accuracy to which the active error constraint is met.
    pub scqp_lambda_tol: f64,
    /// Stop once a sweep lowers the sensitivity by less than this fraction.
    pub sweep_ss_rel_tol: f64,
    /// Rebalance core scales at the start of every sweep.
    pub balanced_norm: bool,
    /// Rotation sweeps per outer sweep.
    pub rotation_sweeps: usize,
    /// Run intensity correction before sensitivity correction.
    pub intensity_first: bool,
    /// Error bound used by corrections inside a fit, as a multiple of the
    /// error at the moment of correction.
    pub delta_factor: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            stiefel_max_iters: 200,
            stiefel_grad_tol: 1e-9,
            scqp_lambda_tol: 1e-8,
            sweep_ss_rel_tol: 1e-6,
            balanced_norm: true,
            rotation_sweeps: 1,
            intensity_first: false,
            delta_factor: 1.0,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stiefel_grad_tol", self.stiefel_grad_tol),
            ("scqp_lambda_tol", self.scqp_lambda_tol),
            ("sweep_ss_rel_tol", self.sweep_ss_rel_tol),
        ] {
            if !(v > 0.0) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.delta_factor >= 1.0) {
            return invalid(format!("delta_factor must be at least 1, got {}", self.delta_factor));
        }
        Ok(())
    }
}
