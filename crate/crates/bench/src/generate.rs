//! Synthetic data with known chain structure.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tchain::decompose::gaussian_model;
use tchain::{DenseTensor, Error, MaskTensor, Result, TcModel};

/// Attempts per core before collinear generation gives up.
const COLLINEAR_RETRIES: usize = 100;

/// splitmix64 finalizer; derives independent seeds from a base seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chain with i.i.d. standard Gaussian cores and its exact reconstruction.
pub fn gen_synthetic(dims: &[usize], bonds: &[usize], seed: u64) -> Result<(DenseTensor, TcModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = gaussian_model(dims, bonds, &mut rng)?;
    Ok((truth.reconstruct(), truth))
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

/// Largest and smallest pairwise column cosine.
pub fn cosine_range(u: &DMatrix<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in 0..u.ncols() {
        for s in r + 1..u.ncols() {
            let c = u.column(r).dot(&u.column(s)) / (u.column(r).norm() * u.column(s).norm());
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    (lo, hi)
}

/// `rows x cols` matrix of unit columns `√ρ_k g + √(1−ρ_k) w_k` with a shared
/// direction `g`, `w_k ⟂ g`, and `ρ_k` uniform in the range, so pairwise
/// cosines are `√(ρ_r ρ_s)` when the `w_k` are orthonormal.
fn collinear_matrix(rows: usize, cols: usize, range: (f64, f64), rng: &mut impl Rng) -> Option<DMatrix<f64>> {
    let (lo, hi) = range;
    let g;
    let w: Vec<DVector<f64>>;
    if cols < rows {
        let q = gaussian_matrix(rows, cols + 1, rng).qr().q();
        g = q.column(0).into_owned();
        w = (0..cols).map(|k| q.column(k + 1).into_owned()).collect();
    } else {
        g = unit(gaussian_matrix(rows, 1, rng).column(0).into_owned());
        w = (0..cols)
            .map(|_| {
                let v = gaussian_matrix(rows, 1, rng).column(0).into_owned();
                let proj = g.dot(&v);
                unit(v - &g * proj)
            })
            .collect();
    }
    let mut u = DMatrix::zeros(rows, cols);
    for (k, wk) in w.iter().enumerate() {
        let rho = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        u.set_column(k, &(&g * rho.sqrt() + wk * (1.0 - rho).sqrt()));
    }
    let (cmin, cmax) = cosine_range(&u);
    (cols < 2 || (cmin >= lo - 1e-12 && cmax <= hi + 1e-12)).then_some(u)
}

/// Chain whose core unfoldings `I_n x R_n R_{n+1}` have columns with every
/// pairwise cosine inside `range`. Cores are then scaled by a common factor
/// so the tensor has unit Frobenius norm.
pub fn gen_collinear(
    dims: &[usize],
    bonds: &[usize],
    range: (f64, f64),
    seed: u64,
) -> Result<(DenseTensor, TcModel)> {
    let (lo, hi) = range;
    if !(0.0 <= lo && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "collinearity range must satisfy 0 <= lo <= hi < 1, got ({lo}, {hi})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = gaussian_model(dims, bonds, &mut rng)?;
    for n in 0..m.order() {
        let (rows, cols) = m.core_matrix(n).shape();
        let u = (0..COLLINEAR_RETRIES)
            .find_map(|_| collinear_matrix(rows, cols, range, &mut rng))
            .ok_or_else(|| {
                Error::GenerationFailure(format!(
                    "no {rows}x{cols} factor with cosines in ({lo}, {hi}) after {COLLINEAR_RETRIES} attempts"
                ))
            })?;
        m.set_core_matrix(n, &u)?;
    }
    let f = m.reconstruct().frobenius_norm().powf(-1.0 / m.order() as f64);
    let m = m.scaled(&vec![f; m.order()])?;
    Ok((m.reconstruct(), m))
}

/// Mask with exactly `round(missing · len)` unobserved entries, chosen
/// uniformly.
pub fn random_mask(dims: &[usize], missing: f64, seed: u64) -> Result<MaskTensor> {
    if !(0.0..1.0).contains(&missing) {
        return Err(Error::InvalidArgument(format!("missing fraction must be in [0, 1), got {missing}")));
    }
    let len: usize = dims.iter().product();
    let n_missing = (missing * len as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    let mut data = vec![true; len];
    for &k in &idx[..n_missing] {
        data[k] = false;
    }
    MaskTensor::new(dims.to_vec(), data)
}
