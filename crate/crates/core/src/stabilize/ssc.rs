//! Alternating correction: every core is replaced by the minimizer of a
//! quadratic penalty (the part of the sensitivity that depends on it, or its
//! squared norm) among all cores keeping the fit error within `δ`.

use std::time::Instant;

use nalgebra::DMatrix;

use super::rotation::{intensity_rotation_sweep, rotation_sweep};
use super::scqp::{scqp_solve, ScqpProblem};
use super::CorrectionConfig;
use crate::error::{invalid, Error, Result};
use crate::model::TcModel;
use crate::report::{DecompositionReport, Termination};
use crate::target::Target;
use crate::tensor::{DenseTensor, MaskTensor};

/// Relative slack allowed on the error bound.
const BOUND_SLACK: f64 = 1e-9;

/// Quadratic form `Q_n` with `vec(A_n(2))ᵀ Q_n vec(A_n(2))` (row-wise) equal
/// to the core-n-dependent part of the sensitivity:
/// `Q_n = Σ_{m≠n} I_m (R_m ⊗ L_m)`, where `L_m` (`R_n x R_n`) and `R_m`
/// (`R_{n+1} x R_{n+1}`) are the self-contractions of the trains left and
/// right of core n inside the subchain that omits core m.
pub fn sensitivity_form(m: &TcModel, n: usize) -> DMatrix<f64> {
    let order = m.order();
    let dims = m.mode_dims();
    let rn = m.core(n).dims()[0];
    let rn1 = m.core(n).dims()[2];
    let mut q = DMatrix::zeros(rn * rn1, rn * rn1);
    for k in 1..order {
        let mm = (n + k) % order;
        let left_len = (n + order - mm - 1) % order;
        let right_len = (mm + order - n - 1) % order;
        let (_, left) = m.boundary_grams((mm + 1) % order, left_len);
        let (right, _) = m.boundary_grams((n + 1) % order, right_len);
        q += right.kronecker(&left) * dims[mm] as f64;
    }
    (&q + q.transpose()) * 0.5
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Penalty {
    Sensitivity,
    Intensity,
}

fn penalty_value(m: &TcModel, p: Penalty) -> f64 {
    match p {
        Penalty::Sensitivity => m.sensitivity().sensitivity,
        Penalty::Intensity => m.core_norms().iter().product(),
    }
}

/// Tries to replace core `n`; returns the candidate if it is feasible and
/// does not raise the penalty.
fn update_core(
    m: &TcModel,
    n: usize,
    target: &Target,
    delta: f64,
    penalty: Penalty,
    cfg: &CorrectionConfig,
) -> Result<Option<TcModel>> {
    let k = m.core(n).dims()[0] * m.core(n).dims()[2];
    let q = match penalty {
        Penalty::Sensitivity => sensitivity_form(m, n),
        Penalty::Intensity => DMatrix::identity(k, k),
    };
    let mut problem = ScqpProblem {
        q,
        yu: target.unfoldings[n].clone(),
        z: m.subchain_matrix(n),
        delta,
        weights: target.weights.as_ref().map(|w| w[n].clone()),
    };
    let bound_sq = (delta * (1.0 + BOUND_SLACK)).powi(2);
    let before = penalty_value(m, penalty);
    for _attempt in 0..3 {
        let sol = match scqp_solve(&problem, cfg.scqp_lambda_tol) {
            Ok(s) => s,
            Err(Error::InfeasibleBound { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if sol.lambda.is_none() {
            // δ admits X = 0; a zero core would leave a degenerate model.
            return Ok(None);
        }
        if sol.residual_sq <= bound_sq {
            let mut cand = m.clone();
            cand.set_core_matrix(n, &sol.x)?;
            let after = penalty_value(&cand, penalty);
            return Ok((after <= before).then_some(cand));
        }
        // Round-off pushed the residual over the bound; aim lower.
        let over = sol.residual_sq - delta * delta;
        let tightened = problem.delta.powi(2) - 4.0 * over;
        if !(tightened > 0.0) {
            break;
        }
        problem.delta = tightened.sqrt();
    }
    Ok(None)
}

fn correct(
    y: &DenseTensor,
    mask: Option<&MaskTensor>,
    m0: &TcModel,
    delta: Option<f64>,
    cfg: &CorrectionConfig,
    penalty: Penalty,
) -> Result<(TcModel, DecompositionReport)> {
    cfg.validate()?;
    if y.dims() != m0.mode_dims().as_slice() {
        return invalid(format!(
            "data dims {:?} do not match model dims {:?}",
            y.dims(),
            m0.mode_dims()
        ));
    }
    let start = Instant::now();
    let target = Target::new(y, mask)?;
    let err0 = target.error(m0);
    let delta = delta.unwrap_or(err0);
    if !(delta >= 0.0) {
        return invalid("delta must be non-negative");
    }
    if err0 > delta * (1.0 + BOUND_SLACK) {
        return invalid(format!(
            "starting model violates the bound: error {err0:e} > delta {delta:e}"
        ));
    }

    let mut report = DecompositionReport::default();
    let mut m = m0.clone();
    let record = |m: &TcModel, report: &mut DecompositionReport| {
        report.push(
            target.error(m) / target.norm,
            m.sensitivity().sensitivity,
            m.core_norms().iter().product(),
        );
    };
    record(&m, &mut report);
    let mut termination = Termination::MaxIters;

    for _ in 0..cfg.max_sweeps {
        let before = penalty_value(&m, penalty);
        if cfg.balanced_norm {
            if let Ok(b) = m.balanced_normalize() {
                if penalty_value(&b, penalty) <= before {
                    m = b;
                }
            }
        }
        for _ in 0..cfg.rotation_sweeps {
            let rotated = match penalty {
                Penalty::Sensitivity => rotation_sweep(&m, cfg)?,
                Penalty::Intensity => intensity_rotation_sweep(&m, cfg)?,
            };
            if penalty_value(&rotated, penalty) <= penalty_value(&m, penalty) {
                m = rotated;
            }
        }
        for n in 0..m.order() {
            if let Some(next) = update_core(&m, n, &target, delta, penalty, cfg)? {
                m = next;
            }
        }
        record(&m, &mut report);
        let after = penalty_value(&m, penalty);
        if before - after <= cfg.sweep_ss_rel_tol * before {
            termination = Termination::Converged;
            break;
        }
    }
    report.termination = Some(termination);
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((m, report))
}

/// Lowers the sensitivity of `m0` while keeping `‖y − ŷ‖ ≤ δ`.
/// `delta = None` uses the current error of `m0`.
pub fn ssc_correct(
    y: &DenseTensor,
    m0: &TcModel,
    delta: Option<f64>,
    cfg: &CorrectionConfig,
) -> Result<(TcModel, DecompositionReport)> {
    correct(y, None, m0, delta, cfg, Penalty::Sensitivity)
}

/// As [`ssc_correct`], with the error measured on observed entries only.
pub fn ssc_correct_masked(
    y: &DenseTensor,
    mask: &MaskTensor,
    m0: &TcModel,
    delta: Option<f64>,
    cfg: &CorrectionConfig,
) -> Result<(TcModel, DecompositionReport)> {
    correct(y, Some(mask), m0, delta, cfg, Penalty::Sensitivity)
}

/// Lowers the intensity (product of core norms) of `m0` while keeping the
/// error within `δ`. Each sweep combines norm-reducing bond rotations with
/// core updates under an identity quadratic form.
pub fn intensity_correct(
    y: &DenseTensor,
    mask: Option<&MaskTensor>,
    m0: &TcModel,
    delta: Option<f64>,
    cfg: &CorrectionConfig,
) -> Result<(TcModel, DecompositionReport)> {
    correct(y, mask, m0, delta, cfg, Penalty::Intensity)
}
