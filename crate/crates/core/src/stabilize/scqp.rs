//! Minimization of `tr(X Q Xᵀ)` subject to `‖W ∘ (Yu − X Zᵀ)‖_F² ≤ δ²`.
//!
//! The Lagrangian stationarity condition `X Q + λ (X G − F) = 0` with
//! `G = Zᵀ Z` (row-wise `Zᵀ diag(w_i) Z` under a mask) and `F = (W ∘ Yu) Z`
//! is diagonalized by the simultaneous reduction of `(Q, G)`. The residual is
//! then an explicit decreasing function of λ and the active constraint is
//! met by a safeguarded Newton iteration.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::sym_eig_desc;

#[derive(Clone, Debug)]
pub struct ScqpProblem {
    pub q: DMatrix<f64>,
    pub yu: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub delta: f64,
    /// Observation weights with the shape of `yu` (typically 0/1).
    pub weights: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct ScqpSolution {
    pub x: DMatrix<f64>,
    /// Multiplier of the active constraint. `None` when the constraint is
    /// inactive (`X = 0`) and `Some(f64::INFINITY)` for the least-squares
    /// limit.
    pub lambda: Option<f64>,
    pub objective: f64,
    /// Explicitly evaluated `‖W ∘ (Yu − X Zᵀ)‖²`.
    pub residual_sq: f64,
    /// Set when `Q` was singular and a ridge was added to whiten it.
    pub q_regularized: bool,
}

/// One group of rows sharing a Gram matrix.
struct Block {
    rows: Vec<usize>,
    /// `W0 E`: columns reduce `Q` to identity and `G` to `diag(lam)`.
    v: DMatrix<f64>,
    lam: Vec<f64>,
    /// `F V` restricted to the block rows.
    p: DMatrix<f64>,
}

fn whitener(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let (vals, vecs) = sym_eig_desc(q);
    let max = vals.iter().cloned().fold(0.0_f64, f64::max);
    if !(max > 0.0) {
        return invalid("quadratic form Q must have a positive eigenvalue");
    }
    if vals.iter().any(|&v| v < -1e-10 * max) {
        return invalid("quadratic form Q is not positive semidefinite");
    }
    let floor = 1e-12 * max;
    let mut regularized = false;
    let mut w = vecs;
    for (k, &v) in vals.iter().enumerate() {
        let v = if v < floor {
            regularized = true;
            floor
        } else {
            v
        };
        let scale = 1.0 / v.sqrt();
        w.column_mut(k).scale_mut(scale);
    }
    Ok((w, regularized))
}

fn build_block(
    rows: Vec<usize>,
    g: &DMatrix<f64>,
    f: &DMatrix<f64>,
    w0: &DMatrix<f64>,
) -> Block {
    let m = w0.transpose() * g * w0;
    let (lam, e) = sym_eig_desc(&m);
    let v = w0 * e;
    let p = f * &v;
    let max = lam.iter().cloned().fold(0.0_f64, f64::max);
    let null = 1e-13 * max;
    let lam = lam.iter().map(|&l| if l > null { l } else { 0.0 }).collect();
    Block { rows, v, lam, p }
}

fn blocks_for(p: &ScqpProblem, w0: &DMatrix<f64>) -> Vec<Block> {
    match &p.weights {
        None => {
            let g = p.z.transpose() * &p.z;
            let f = &p.yu * &p.z;
            vec![build_block((0..p.yu.nrows()).collect(), &g, &f, w0)]
        }
        Some(w) => (0..p.yu.nrows())
            .map(|i| {
                let k = p.z.ncols();
                let mut g = DMatrix::zeros(k, k);
                let mut f = DMatrix::zeros(1, k);
                for j in 0..p.z.nrows() {
                    let wij = w[(i, j)];
                    if wij == 0.0 {
                        continue;
                    }
                    let zj = p.z.row(j);
                    g += zj.transpose() * zj * wij;
                    f += zj * (wij * p.yu[(i, j)]);
                }
                build_block(vec![i], &g, &f, w0)
            })
            .collect(),
    }
}

/// `X(λ)`; `lambda = ∞` gives the minimum-Q-norm least-squares solution.
fn assemble(blocks: &[Block], rows: usize, k: usize, lambda: f64) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(rows, k);
    for b in blocks {
        let coef: Vec<f64> = b
            .lam
            .iter()
            .map(|&l| {
                if l == 0.0 {
                    0.0
                } else if lambda.is_infinite() {
                    1.0 / l
                } else {
                    lambda / (1.0 + lambda * l)
                }
            })
            .collect();
        for (local, &row) in b.rows.iter().enumerate() {
            let mut xr = DMatrix::zeros(1, k);
            for (c, &cf) in coef.iter().enumerate() {
                if cf != 0.0 {
                    xr += b.v.column(c).transpose() * (cf * b.p[(local, c)]);
                }
            }
            x.set_row(row, &xr.row(0));
        }
    }
    x
}

/// `Σ p² / (Λ (1 + λΛ)²)`: residual in excess of the least-squares residual.
fn excess(blocks: &[Block], lambda: f64) -> (f64, f64) {
    let mut h = 0.0;
    let mut dh = 0.0;
    for b in blocks {
        for (c, &l) in b.lam.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let d = 1.0 + lambda * l;
            for local in 0..b.rows.len() {
                let p2 = b.p[(local, c)].powi(2);
                h += p2 / (l * d * d);
                dh -= 2.0 * p2 / (d * d * d);
            }
        }
    }
    (h, dh)
}

pub fn residual_sq(p: &ScqpProblem, x: &DMatrix<f64>) -> f64 {
    let r = &p.yu - x * p.z.transpose();
    match &p.weights {
        None => r.norm_squared(),
        Some(w) => r.component_mul(w).norm_squared(),
    }
}

fn objective(q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (x * q).component_mul(x).sum()
}

pub fn scqp_solve(p: &ScqpProblem, lambda_tol: f64) -> Result<ScqpSolution> {
    let k = p.q.nrows();
    if p.q.ncols() != k || p.z.ncols() != k {
        return invalid(format!(
            "Q is {}x{} but Z has {} columns",
            p.q.nrows(),
            p.q.ncols(),
            p.z.ncols()
        ));
    }
    if p.yu.ncols() != p.z.nrows() {
        return invalid("Yu and Z disagree on the number of columns/rows");
    }
    if let Some(w) = &p.weights {
        if w.shape() != p.yu.shape() {
            return invalid("weights must have the shape of Yu");
        }
    }
    if !(p.delta >= 0.0) || !(lambda_tol > 0.0) {
        return invalid("delta must be non-negative and lambda_tol positive");
    }
    let rows = p.yu.nrows();
    let delta_sq = p.delta * p.delta;
    let total = match &p.weights {
        None => p.yu.norm_squared(),
        Some(w) => p.yu.component_mul(w).norm_squared(),
    };
    if total <= delta_sq {
        return Ok(ScqpSolution {
            x: DMatrix::zeros(rows, k),
            lambda: None,
            objective: 0.0,
            residual_sq: total,
            q_regularized: false,
        });
    }

    let (w0, q_regularized) = whitener(&p.q)?;
    let blocks = blocks_for(p, &w0);
    let x_ls = assemble(&blocks, rows, k, f64::INFINITY);
    let r_ls = residual_sq(p, &x_ls);
    let slack = 1e-10 * delta_sq + 64.0 * f64::EPSILON * total;
    let target = delta_sq - r_ls;
    let (h0, _) = excess(&blocks, 0.0);
    if target <= slack.max(1e-12 * h0) {
        if delta_sq + slack >= r_ls {
            return Ok(ScqpSolution {
                objective: objective(&p.q, &x_ls),
                x: x_ls,
                lambda: Some(f64::INFINITY),
                residual_sq: r_ls,
                q_regularized,
            });
        }
        return Err(Error::InfeasibleBound { delta: p.delta, ls_residual: r_ls.sqrt() });
    }
    if target >= h0 {
        // Round-off put X = 0 on the boundary.
        return Ok(ScqpSolution {
            x: DMatrix::zeros(rows, k),
            lambda: None,
            objective: 0.0,
            residual_sq: total,
            q_regularized,
        });
    }

    // h(λ) decreases from h0 to 0; solve h(λ) = target. Newton on
    // 1/sqrt(h), which is close to linear in λ, safeguarded by a bracket.
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while excess(&blocks, hi).0 > target {
        lo = hi;
        hi *= 16.0;
        if !hi.is_finite() {
            break;
        }
    }
    let tol = (1e-3 * lambda_tol).min(1e-12) * delta_sq.max(f64::MIN_POSITIVE);
    let mut lambda = 0.5 * (lo + hi);
    let phi_target = 1.0 / target.sqrt();
    for _ in 0..200 {
        let (h, dh) = excess(&blocks, lambda);
        if (h - target).abs() <= tol {
            break;
        }
        if h > target {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let phi = 1.0 / h.sqrt();
        let dphi = -0.5 * dh / (h * h.sqrt());
        let mut next = lambda - (phi - phi_target) / dphi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        }
        if (next - lambda).abs() <= 1e-16 * lambda {
            break;
        }
        lambda = next;
    }
    let x = assemble(&blocks, rows, k, lambda);
    Ok(ScqpSolution {
        objective: objective(&p.q, &x),
        residual_sq: residual_sq(p, &x),
        x,
        lambda: Some(lambda),
        q_regularized,
    })
}
