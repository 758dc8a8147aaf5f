//! Sensitivity reduction by invertible rotations of a bond.
//!
//! For the bond between cores n and n+1, the model is re-parameterized as
//! `A_n • Q` and `Q⁻¹ • A_{n+1}` with `Q = U diag(√s) Uᵀ`. Only the two
//! sensitivity terms of modes n and n+1 change:
//!
//! ```text
//! I_n Σ_r a_r / s_r + I_{n+1} Σ_r s_r b_r,   a_r = u_rᵀ T1 u_r,  b_r = u_rᵀ T2 u_r
//! ```
//!
//! minimized in closed form over `s`, leaving `Σ_r sqrt(a_r b_r)` to be
//! minimized over orthogonal `U`.

use nalgebra::{DMatrix, DVector};

use super::stiefel::{stiefel_minimize, StiefelResult};
use super::CorrectionConfig;
use crate::error::{Error, Result};
use crate::model::{core_slice, core_times_matrix, matrix_times_core, TcModel};

/// `(T1, T2)` for the bond between cores `n` and `n+1`; both are
/// `R_{n+1} x R_{n+1}`.
///
/// `T1 = Σ_i A_{n+1}(:,i,:) X1 A_{n+1}(:,i,:)ᵀ` and
/// `T2 = Σ_i A_n(:,i,:)ᵀ X2 A_n(:,i,:)`, where `X1` and `X2` are the
/// self-contractions of the remaining train keeping its leading and trailing
/// bond respectively.
pub fn rotation_matrices(m: &TcModel, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let order = m.order();
    let next = (n + 1) % order;
    let (x1, x2) = m.boundary_grams((n + 2) % order, order - 2);
    (
        sandwich_left(m.core(next), &x1),
        sandwich_right(m.core(n), &x2),
    )
}

/// `Σ_i B_i X B_iᵀ`.
pub(crate) fn sandwich_left(b: &crate::DenseTensor, x: &DMatrix<f64>) -> DMatrix<f64> {
    let r = b.dims()[0];
    let mut t = DMatrix::zeros(r, r);
    for i in 0..b.dims()[1] {
        let s = core_slice(b, i);
        t += &s * x * s.transpose();
    }
    symmetrize_in_place(t)
}

/// `Σ_i A_iᵀ X A_i`.
pub(crate) fn sandwich_right(a: &crate::DenseTensor, x: &DMatrix<f64>) -> DMatrix<f64> {
    let r = a.dims()[2];
    let mut t = DMatrix::zeros(r, r);
    for i in 0..a.dims()[1] {
        let s = core_slice(a, i);
        t += s.transpose() * x * &s;
    }
    symmetrize_in_place(t)
}

fn symmetrize_in_place(t: DMatrix<f64>) -> DMatrix<f64> {
    (&t + t.transpose()) * 0.5
}

/// Closed-form optimal eigenvalues `s_r = sqrt(w1 a_r / (w2 b_r))` for a
/// fixed basis `U`.
pub fn optimal_scales(
    t1: &DMatrix<f64>,
    t2: &DMatrix<f64>,
    u: &DMatrix<f64>,
    w1: f64,
    w2: f64,
) -> Result<Vec<f64>> {
    let floor = 1e-14 * (t1.trace().abs() + t2.trace().abs()).max(f64::MIN_POSITIVE);
    (0..u.ncols())
        .map(|r| {
            let ur = u.column(r);
            let a = ur.dot(&(t1 * ur));
            let b = ur.dot(&(t2 * ur));
            if !(a > floor) || !(b > floor) {
                Err(Error::DegenerateRotation { component: r })
            } else {
                Ok((w1 * a / (w2 * b)).sqrt())
            }
        })
        .collect()
}

/// Value of the two bond-dependent terms for eigenvalues `s` in basis `U`.
pub fn bond_terms(
    t1: &DMatrix<f64>,
    t2: &DMatrix<f64>,
    u: &DMatrix<f64>,
    s: &[f64],
    w1: f64,
    w2: f64,
) -> f64 {
    (0..u.ncols())
        .map(|r| {
            let ur = u.column(r);
            let a = ur.dot(&(t1 * ur));
            let b = ur.dot(&(t2 * ur));
            w1 * a / s[r] + w2 * s[r] * b
        })
        .sum()
}

/// Applies `A_n ← A_n • U diag(√s) Uᵀ`, `A_{n+1} ← U diag(1/√s) Uᵀ • A_{n+1}`.
pub fn apply_rotation(m: &TcModel, n: usize, u: &DMatrix<f64>, s: &[f64]) -> Result<TcModel> {
    let order = m.order();
    let next = (n + 1) % order;
    let sq = DVector::from_iterator(s.len(), s.iter().map(|v| v.sqrt()));
    let inv = DVector::from_iterator(s.len(), s.iter().map(|v| 1.0 / v.sqrt()));
    let q = u * DMatrix::from_diagonal(&sq) * u.transpose();
    let q_inv = u * DMatrix::from_diagonal(&inv) * u.transpose();
    let mut cores = m.cores().to_vec();
    cores[n] = core_times_matrix(m.core(n), &q);
    cores[next] = matrix_times_core(&q_inv, m.core(next));
    TcModel::new(cores)
}

/// Rotation of one bond given its quadratic forms and weights.
pub(crate) fn rotate_with_forms(
    m: &TcModel,
    n: usize,
    t1: &DMatrix<f64>,
    t2: &DMatrix<f64>,
    w1: f64,
    w2: f64,
    cfg: &CorrectionConfig,
) -> Result<(TcModel, StiefelResult)> {
    let res = stiefel_minimize(t1, t2, None, cfg.stiefel_max_iters, cfg.stiefel_grad_tol)?;
    let s = optimal_scales(t1, t2, &res.u, w1, w2)?;
    Ok((apply_rotation(m, n, &res.u, &s)?, res))
}

/// Optimal rotation of the bond between cores `n` and `n+1`.
///
/// Returns the input unchanged if round-off would make the sensitivity grow.
pub fn rotate_pair(m: &TcModel, n: usize, cfg: &CorrectionConfig) -> Result<TcModel> {
    let order = m.order();
    let dims = m.mode_dims();
    let (t1, t2) = rotation_matrices(m, n);
    let (w1, w2) = (dims[n] as f64, dims[(n + 1) % order] as f64);
    let (out, _) = rotate_with_forms(m, n, &t1, &t2, w1, w2, cfg)?;
    let before = m.sensitivity().sensitivity;
    let after = out.sensitivity().sensitivity;
    Ok(if after <= before { out } else { m.clone() })
}

/// One pass of [`rotate_pair`] over all bonds; bonds whose optimal scales
/// are undefined are left as they are.
pub fn rotation_sweep(m: &TcModel, cfg: &CorrectionConfig) -> Result<TcModel> {
    let mut cur = m.clone();
    for n in 0..m.order() {
        match rotate_pair(&cur, n, cfg) {
            Ok(next) => cur = next,
            Err(Error::DegenerateRotation { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(cur)
}

/// Repeats rotation sweeps until the relative sensitivity decrease drops
/// below `sweep_ss_rel_tol` or `max_sweeps` is reached. Returns the model
/// and the sensitivity after each sweep (index 0 is the input).
pub fn rotation_correct(m: &TcModel, cfg: &CorrectionConfig) -> Result<(TcModel, Vec<f64>)> {
    cfg.validate()?;
    let mut cur = m.clone();
    let mut history = vec![cur.sensitivity().sensitivity];
    for _ in 0..cfg.max_sweeps {
        let next = rotation_sweep(&cur, cfg)?;
        let ss = next.sensitivity().sensitivity;
        let prev = *history.last().unwrap();
        cur = next;
        history.push(ss);
        if prev - ss <= cfg.sweep_ss_rel_tol * prev {
            break;
        }
    }
    Ok((cur, history))
}

/// Bond rotation that lowers `‖A_n‖² + ‖A_{n+1}‖²` and hence, after
/// rebalancing the two norms, the intensity.
pub fn intensity_rotation_sweep(m: &TcModel, cfg: &CorrectionConfig) -> Result<TcModel> {
    let mut cur = m.clone();
    let order = m.order();
    for n in 0..order {
        let next = (n + 1) % order;
        let eye_l = DMatrix::identity(cur.core(next).dims()[2], cur.core(next).dims()[2]);
        let eye_r = DMatrix::identity(cur.core(n).dims()[0], cur.core(n).dims()[0]);
        let t1 = sandwich_left(cur.core(next), &eye_l);
        let t2 = sandwich_right(cur.core(n), &eye_r);
        let before = cur.intensity()?;
        match rotate_with_forms(&cur, n, &t1, &t2, 1.0, 1.0, cfg) {
            Ok((cand, _)) => {
                if cand.intensity()? <= before {
                    cur = cand;
                }
            }
            Err(Error::DegenerateRotation { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseTensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_model(dims: &[usize], bonds: &[usize], seed: u64) -> TcModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len();
        let cores = (0..n)
            .map(|k| {
                let d = vec![bonds[k], dims[k], bonds[(k + 1) % n]];
                DenseTensor::from_fn(d, |_| StandardNormal.sample(&mut rng)).unwrap()
            })
            .collect();
        TcModel::new(cores).unwrap()
    }

    #[test]
    fn bond_terms_match_sensitivity_terms() {
        let m = random_model(&[4, 5, 3, 4], &[2, 3, 2, 3], 1);
        let dims = m.mode_dims();
        for n in 0..4 {
            let (t1, t2) = rotation_matrices(&m, n);
            let r = t1.nrows();
            let eye = DMatrix::identity(r, r);
            let ones = vec![1.0; r];
            let next = (n + 1) % 4;
            let got = bond_terms(&t1, &t2, &eye, &ones, dims[n] as f64, dims[next] as f64);
            let terms = m.sensitivity().per_mode_terms;
            let want = terms[n] + terms[next];
            assert!((got - want).abs() <= 1e-10 * want);
        }
    }

    #[test]
    fn rotation_preserves_reconstruction_and_lowers_ss() {
        let m = random_model(&[5, 4, 6], &[3, 2, 3], 2);
        let m = m.scaled(&[1e3, 1e-3, 1.0]).unwrap();
        let cfg = CorrectionConfig::default();
        let out = rotate_pair(&m, 0, &cfg).unwrap();
        let y0 = m.reconstruct();
        let y1 = out.reconstruct();
        let drift = y0.sub(&y1).unwrap().frobenius_norm() / y0.frobenius_norm();
        assert!(drift < 1e-9);
        assert!(out.sensitivity().sensitivity * 10.0 <= m.sensitivity().sensitivity);
    }
}
