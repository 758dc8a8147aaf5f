//! Minimization of `f(U) = Σ_r sqrt((u_rᵀ T1 u_r)(u_rᵀ T2 u_r))` over
//! orthogonal `U`, by Cayley-retraction descent with Barzilai–Borwein steps
//! and a monotone Armijo backtracking.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::sym_eig_desc;

/// Below this value a quadratic form is treated as vanishing and the
/// objective term is smoothed.
const FORM_FLOOR: f64 = 1e-14;
const SMOOTHING: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct StiefelResult {
    pub u: DMatrix<f64>,
    pub objective: f64,
    /// Frobenius norm of the skew-symmetric search direction `G Uᵀ - U Gᵀ`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn forms(t1: &DMatrix<f64>, t2: &DMatrix<f64>, u: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let t1u = t1 * u;
    let t2u = t2 * u;
    let r = u.ncols();
    let a = (0..r).map(|k| u.column(k).dot(&t1u.column(k))).collect();
    let b = (0..r).map(|k| u.column(k).dot(&t2u.column(k))).collect();
    (a, b)
}

fn term(a: f64, b: f64) -> f64 {
    if a < FORM_FLOOR || b < FORM_FLOOR {
        (a.max(0.0) * b.max(0.0) + SMOOTHING * SMOOTHING).sqrt()
    } else {
        (a * b).sqrt()
    }
}

pub fn stiefel_objective(t1: &DMatrix<f64>, t2: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let (a, b) = forms(t1, t2, u);
    a.iter().zip(&b).map(|(&a, &b)| term(a, b)).sum()
}

/// Euclidean gradient of the (smoothed) objective with respect to `U`.
pub fn stiefel_gradient(t1: &DMatrix<f64>, t2: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let t1u = t1 * u;
    let t2u = t2 * u;
    let r = u.ncols();
    let mut g = DMatrix::zeros(u.nrows(), r);
    for k in 0..r {
        let a = u.column(k).dot(&t1u.column(k));
        let b = u.column(k).dot(&t2u.column(k));
        let (ca, cb) = if a < FORM_FLOOR || b < FORM_FLOOR {
            let s = (a.max(0.0) * b.max(0.0) + SMOOTHING * SMOOTHING).sqrt();
            (b.max(0.0) / s, a.max(0.0) / s)
        } else {
            ((b / a).sqrt(), (a / b).sqrt())
        };
        let col = t1u.column(k) * ca + t2u.column(k) * cb;
        g.set_column(k, &col);
    }
    g
}

/// Eigenvectors of `T1 + T2`, eigenvalues descending.
pub fn eigen_init(t1: &DMatrix<f64>, t2: &DMatrix<f64>) -> DMatrix<f64> {
    sym_eig_desc(&(t1 + t2)).1
}

fn cayley(u: &DMatrix<f64>, a: &DMatrix<f64>, tau: f64) -> Option<DMatrix<f64>> {
    let n = u.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let lhs = &eye + a * (0.5 * tau);
    let rhs = (&eye - a * (0.5 * tau)) * u;
    lhs.lu().solve(&rhs)
}

fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
    let n = u.ncols();
    (u.transpose() * u - DMatrix::<f64>::identity(n, n)).norm()
}

/// Re-orthonormalizes through the polar factor of `U`.
fn polar(u: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = u.clone().svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

pub fn stiefel_minimize(
    t1: &DMatrix<f64>,
    t2: &DMatrix<f64>,
    u0: Option<&DMatrix<f64>>,
    max_iters: usize,
    grad_tol: f64,
) -> Result<StiefelResult> {
    let r = t1.nrows();
    if t1.shape() != (r, r) || t2.shape() != (r, r) {
        return invalid("T1 and T2 must be square matrices of the same size");
    }
    let mut u = match u0 {
        Some(u0) => {
            if u0.shape() != (r, r) {
                return invalid(format!("U0 must be {r} x {r}"));
            }
            if orthonormality_error(u0) > 1e-8 {
                return invalid("U0 is not orthonormal");
            }
            u0.clone()
        }
        None => eigen_init(t1, t2),
    };

    let mut f = stiefel_objective(t1, t2, &u);
    let mut g = stiefel_gradient(t1, t2, &u);
    let mut a = &g * u.transpose() - &u * g.transpose();
    let mut grad_norm = a.norm();
    let scale = f.abs().max(f64::MIN_POSITIVE);
    let mut tau = 1.0 / grad_norm.max(f64::MIN_POSITIVE);
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut iterations = 0;

    while iterations < max_iters {
        if grad_norm <= grad_tol * scale.max(1.0) {
            return Ok(StiefelResult { u, objective: f, grad_norm, iterations, converged: true });
        }
        let dir = &a * &u;
        if let Some((u_prev, dir_prev)) = prev.take() {
            let s = &u - u_prev;
            let y = &dir - dir_prev;
            let sy = s.dot(&y).abs();
            let ss = s.dot(&s);
            if sy > 0.0 && ss > 0.0 {
                tau = if iterations % 2 == 0 { ss / sy } else { sy / y.dot(&y).max(f64::MIN_POSITIVE) };
            }
        }
        tau = tau.clamp(1e-20, 1e20);

        // f'(0) along the Cayley curve is -‖A‖²/2.
        let slope = 0.5 * grad_norm * grad_norm;
        let mut accepted = None;
        let mut step = tau;
        for _ in 0..60 {
            if let Some(cand) = cayley(&u, &a, step) {
                let fc = stiefel_objective(t1, t2, &cand);
                if fc.is_finite() && fc <= f - 1e-4 * step * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((mut cand, fc)) = accepted else {
            break;
        };
        if orthonormality_error(&cand) > 1e-12 {
            let fixed = polar(&cand);
            let ff = stiefel_objective(t1, t2, &fixed);
            if ff <= f {
                cand = fixed;
            }
        }
        iterations += 1;
        prev = Some((u, dir));
        u = cand;
        let f_old = f;
        f = stiefel_objective(t1, t2, &u);
        debug_assert!(f <= fc.max(f_old));
        g = stiefel_gradient(t1, t2, &u);
        a = &g * u.transpose() - &u * g.transpose();
        grad_norm = a.norm();
        tau = step;
        if f_old - f <= 1e-15 * f_old.abs() && grad_norm <= 1e-8 * scale.max(1.0) {
            break;
        }
    }
    let converged = grad_norm <= grad_tol * scale.max(1.0);
    Ok(StiefelResult { u, objective: f, grad_norm, iterations, converged })
}
