//! The tensor chain model, its reconstruction, and its stability measures.
//!
//! A chain of order N holds cores `A_n` of shape `R_n x I_n x R_{n+1}` with
//! `R_{N+1} = R_1`, and represents
//!
//! ```text
//! y[i_1, .., i_N] = tr( A_1(:, i_1, :) A_2(:, i_2, :) ... A_N(:, i_N, :) )
//! ```
//!
//! The subchain `A_{-n}` is the open train `A_{n+1} • .. • A_N • A_1 • .. • A_{n-1}`
//! of shape `R_{n+1} x I_{n+1} x .. x I_{n-1} x R_n`. Sensitivity is
//! `Σ_n I_n ‖A_{-n}‖²`, the limit of the normalized expected squared
//! reconstruction change under i.i.d. Gaussian core noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{identity_vec, square_from_vec};
use crate::tensor::{train_contract, unfold, DenseTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TcModel {
    cores: Vec<DenseTensor>,
}

/// How subchain norms `‖A_{-n}‖²` are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubchainNorm {
    /// Materialize the subchain and take its norm.
    Dense,
    /// Contract the per-core transfer (Gram) matrices with identity boundaries.
    Gram,
    /// Dense for order 3, Gram otherwise.
    #[default]
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityMeasures {
    pub intensity: f64,
    pub sensitivity: f64,
    /// `β_n² = I_n ‖A_{-n}‖²`.
    pub per_mode_terms: Vec<f64>,
}

impl TcModel {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        let n = cores.len();
        if n < 3 {
            return invalid(format!("a tensor chain needs at least 3 cores, got {n}"));
        }
        for (k, c) in cores.iter().enumerate() {
            if c.order() != 3 {
                return invalid(format!("core {k} has order {}, expected 3", c.order()));
            }
            let next = &cores[(k + 1) % n];
            if c.dims()[2] != next.dims()[0] {
                return invalid(format!(
                    "bond mismatch: core {k} is {:?} but core {} is {:?}",
                    c.dims(),
                    (k + 1) % n,
                    next.dims()
                ));
            }
        }
        Ok(Self { cores })
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    /// `(R_1, .., R_N)`; core n is `R_n x I_n x R_{n+1}`.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[0]).collect()
    }

    pub fn mode_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[1]).collect()
    }

    pub fn core(&self, n: usize) -> &DenseTensor {
        &self.cores[n]
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    pub fn num_params(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// Replaces core `n`, keeping the shape.
    pub fn set_core(&mut self, n: usize, core: DenseTensor) -> Result<()> {
        if core.dims() != self.cores[n].dims() {
            return invalid(format!(
                "core {n} must keep shape {:?}, got {:?}",
                self.cores[n].dims(),
                core.dims()
            ));
        }
        self.cores[n] = core;
        Ok(())
    }

    /// Multiplies core n by `factors[n]`.
    pub fn scaled(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.order() {
            return invalid("one scale factor per core is required");
        }
        Ok(Self {
            cores: self
                .cores
                .iter()
                .zip(factors)
                .map(|(c, &s)| c.scaled(s))
                .collect(),
        })
    }

    /// Mode-2 unfolding of core n: `I_n x (R_n R_{n+1})`, column `a + R_n b`.
    pub fn core_matrix(&self, n: usize) -> DMatrix<f64> {
        core_to_matrix(&self.cores[n])
    }

    /// Inverse of [`TcModel::core_matrix`].
    pub fn set_core_matrix(&mut self, n: usize, m: &DMatrix<f64>) -> Result<()> {
        let dims = self.cores[n].dims().to_vec();
        if m.nrows() != dims[1] || m.ncols() != dims[0] * dims[2] {
            return invalid(format!(
                "core matrix for core {n} must be {} x {}",
                dims[1],
                dims[0] * dims[2]
            ));
        }
        self.cores[n] = matrix_to_core(m, dims[0], dims[2]);
        Ok(())
    }

    /// Full tensor represented by the chain.
    pub fn reconstruct(&self) -> DenseTensor {
        let a = self.core_matrix(0);
        let z = self.subchain_matrix(0);
        let y = a * z.transpose();
        DenseTensor::new(self.mode_dims(), y.as_slice().to_vec()).expect("consistent dims")
    }

    /// The open train `A_{n+1} • .. • A_{n-1}` (all cores except n, cyclic).
    pub fn subchain(&self, n: usize) -> DenseTensor {
        let order = self.order();
        let mut acc = self.cores[(n + 1) % order].clone();
        for k in 2..order {
            acc = train_contract(&acc, &self.cores[(n + k) % order]).expect("bonds match");
        }
        acc
    }

    /// Subchain `A_{-n}` unfolded to `(Π_{k≠n} I_k) x (R_n R_{n+1})`.
    ///
    /// Rows follow the cyclic mode order `n+1, .., n-1` (first fastest) and
    /// column `a + R_n b` pairs with the core unfolding so that the mode-n
    /// unfolding of the reconstruction is `core_matrix(n) * Zᵀ`.
    pub fn subchain_matrix(&self, n: usize) -> DMatrix<f64> {
        let s = self.subchain(n);
        let rb = s.dims()[0];
        let ra = *s.dims().last().unwrap();
        let p = s.len() / (ra * rb);
        let data = s.data();
        let mut z = DMatrix::zeros(p, ra * rb);
        for b in 0..rb {
            for a in 0..ra {
                let col = a + ra * b;
                let base = b + rb * p * a;
                let dst = z.column_mut(col);
                for (i, v) in dst.into_iter().enumerate() {
                    *v = data[base + rb * i];
                }
            }
        }
        z
    }

    /// Transfer (self-contraction) matrix of core n:
    /// `B_n[(a + R a'), (b + R' b')] = Σ_i A_n[a,i,b] A_n[a',i,b']`.
    pub fn transfer(&self, n: usize) -> DMatrix<f64> {
        transfer_matrix(&self.cores[n])
    }

    /// Product `B_start B_{start+1} .. B_{start+len-1}` (indices cyclic).
    /// An empty product is the identity on `R_start²`.
    pub fn chain_transfer(&self, start: usize, len: usize) -> DMatrix<f64> {
        let order = self.order();
        let r = self.cores[start % order].dims()[0];
        let mut acc = DMatrix::identity(r * r, r * r);
        for k in 0..len {
            acc *= self.transfer((start + k) % order);
        }
        acc
    }

    /// `‖A_{-n}‖²`.
    pub fn subchain_norm_sq(&self, n: usize, method: SubchainNorm) -> f64 {
        let use_dense = match method {
            SubchainNorm::Dense => true,
            SubchainNorm::Gram => false,
            SubchainNorm::Auto => self.order() == 3,
        };
        if use_dense {
            self.subchain(n).norm_sq()
        } else {
            let order = self.order();
            let first = (n + 1) % order;
            let m = self.chain_transfer(first, order - 1);
            let left = identity_vec(self.cores[first].dims()[0]);
            let right = identity_vec(self.cores[n].dims()[0]);
            left.dot(&(m * right))
        }
    }

    /// Self-contractions of the open train `A_start • .. • A_{start+len-1}`:
    /// returns `(X_first, X_last)` where `X_first` keeps the leading bond and
    /// `X_last` keeps the trailing bond.
    pub fn boundary_grams(&self, start: usize, len: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let order = self.order();
        let r_first = self.cores[start % order].dims()[0];
        let r_last = self.cores[(start + len) % order].dims()[0];
        if len == 0 {
            let eye = DMatrix::identity(r_first, r_first);
            return (eye.clone(), eye);
        }
        let m = self.chain_transfer(start, len);
        let x_first = square_from_vec(&(&m * identity_vec(r_last)), r_first);
        let x_last = square_from_vec(&(m.transpose() * identity_vec(r_first)), r_last);
        (x_first, x_last)
    }

    pub fn sensitivity(&self) -> StabilityMeasures {
        self.sensitivity_with(SubchainNorm::Auto)
    }

    pub fn sensitivity_with(&self, method: SubchainNorm) -> StabilityMeasures {
        let dims = self.mode_dims();
        let per_mode_terms: Vec<f64> = (0..self.order())
            .map(|n| dims[n] as f64 * self.subchain_norm_sq(n, method))
            .collect();
        StabilityMeasures {
            intensity: self.core_norms().iter().product(),
            sensitivity: per_mode_terms.iter().sum(),
            per_mode_terms,
        }
    }

    pub fn core_norms(&self) -> Vec<f64> {
        self.cores.iter().map(|c| c.frobenius_norm()).collect()
    }

    /// Product of core Frobenius norms.
    pub fn intensity(&self) -> Result<f64> {
        let norms = self.core_norms();
        if let Some(k) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::DegenerateModel(format!("core {k} is zero")));
        }
        Ok(norms.iter().product())
    }

    /// Upper bound `Σ_n I_n Π_{k≠n} ‖A_k‖²` on the sensitivity.
    pub fn intensity_bound(&self) -> f64 {
        let norms_sq: Vec<f64> = self.cores.iter().map(|c| c.norm_sq()).collect();
        let dims = self.mode_dims();
        (0..self.order())
            .map(|n| {
                let prod: f64 = norms_sq
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != n)
                    .map(|(_, v)| v)
                    .product();
                dims[n] as f64 * prod
            })
            .sum()
    }

    /// Rescales the cores to the equivalent model of minimal sensitivity
    /// among pure scalings, where every `β_n` term becomes equal.
    pub fn balanced_normalize(&self) -> Result<TcModel> {
        self.balanced_normalize_with(SubchainNorm::Auto)
    }

    pub fn balanced_normalize_with(&self, method: SubchainNorm) -> Result<TcModel> {
        let terms = self.sensitivity_with(method).per_mode_terms;
        if let Some(k) = terms.iter().position(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::DegenerateModel(format!(
                "sensitivity term {k} is {}; cannot balance",
                terms[k]
            )));
        }
        // α_n = β_n / β with β the geometric mean; computed in log space.
        let log_beta: Vec<f64> = terms.iter().map(|t| 0.5 * t.ln()).collect();
        let mean = log_beta.iter().sum::<f64>() / log_beta.len() as f64;
        let alphas: Vec<f64> = log_beta.iter().map(|l| (l - mean).exp()).collect();
        self.scaled(&alphas)
    }

    /// Builds an equivalent order-3 model whose intensity diverges as `x → 1`.
    ///
    /// The product `A • B` is split by a thin SVD into `U • S • V`, and the
    /// bond is mixed by `Q = I + x (e_1 e_2ᵀ + e_2 e_1ᵀ)`:
    /// `A' = U • Q`, `B' = Q⁻¹ S • V`.
    pub fn degeneracy_sequence(&self, x: f64) -> Result<TcModel> {
        if self.order() != 3 {
            return Err(Error::Unsupported(format!(
                "degeneracy construction is defined for order 3, got {}",
                self.order()
            )));
        }
        if !(0.0..1.0).contains(&x) {
            return invalid(format!("mixing value x = {x} must lie in [0, 1)"));
        }
        let bonds = self.bond_dims();
        let dims = self.mode_dims();
        let (r1, r2, r3) = (bonds[0], bonds[1], bonds[2]);
        if r2 < 2 {
            return Err(Error::Unsupported(format!(
                "degeneracy construction needs R_2 >= 2, got {r2}"
            )));
        }
        let ab = train_contract(&self.cores[0], &self.cores[1])?;
        let m = unfold(&ab, &[0, 1], &[2, 3])?.to_matrix();
        let (u, s, vt) = thin_svd_sorted(&m, r2);
        let mut q = DMatrix::<f64>::identity(r2, r2);
        q[(0, 1)] = x;
        q[(1, 0)] = x;
        let q_inv = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("mixing matrix is singular".into()))?;
        let a_new = &u * &q;
        let b_new = q_inv * DMatrix::from_diagonal(&s) * vt;
        let a_core = DenseTensor::new(vec![r1, dims[0], r2], a_new.as_slice().to_vec())?;
        let b_core = DenseTensor::new(vec![r2, dims[1], r3], b_new.as_slice().to_vec())?;
        TcModel::new(vec![a_core, b_core, self.cores[2].clone()])
    }

    /// Leading `r2` singular values of the `(R_1 I_1) x (I_2 R_3)` unfolding
    /// of `A • B` (used by the closed-form degeneracy intensity).
    pub fn pair_singular_values(&self, r2: usize) -> Result<Vec<f64>> {
        let ab = train_contract(&self.cores[0], &self.cores[1])?;
        let m = unfold(&ab, &[0, 1], &[2, 3])?.to_matrix();
        Ok(thin_svd_sorted(&m, r2).1.iter().copied().collect())
    }
}

/// Thin SVD truncated to `k` components, singular values descending.
pub(crate) fn thin_svd_sorted(
    m: &DMatrix<f64>,
    k: usize,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(std::cmp::Ordering::Equal));
    let avail = sv.len();
    let mut uk = DMatrix::zeros(m.nrows(), k);
    let mut sk = DVector::zeros(k);
    let mut vk = DMatrix::zeros(k, m.ncols());
    for (dst, &src) in order.iter().take(k.min(avail)).enumerate() {
        uk.set_column(dst, &u.column(src));
        sk[dst] = sv[src];
        vk.set_row(dst, &vt.row(src));
    }
    (uk, sk, vk)
}

pub(crate) fn core_to_matrix(core: &DenseTensor) -> DMatrix<f64> {
    let d = core.dims();
    let (ra, ni, rb) = (d[0], d[1], d[2]);
    let data = core.data();
    let mut m = DMatrix::zeros(ni, ra * rb);
    for b in 0..rb {
        for a in 0..ra {
            let col = a + ra * b;
            for i in 0..ni {
                m[(i, col)] = data[a + ra * (i + ni * b)];
            }
        }
    }
    m
}

pub(crate) fn matrix_to_core(m: &DMatrix<f64>, ra: usize, rb: usize) -> DenseTensor {
    let ni = m.nrows();
    let mut data = vec![0.0; ra * ni * rb];
    for b in 0..rb {
        for a in 0..ra {
            let col = a + ra * b;
            for i in 0..ni {
                data[a + ra * (i + ni * b)] = m[(i, col)];
            }
        }
    }
    DenseTensor::new(vec![ra, ni, rb], data).expect("consistent dims")
}

/// Lateral slice `A(:, i, :)` as an `R x R'` matrix.
pub(crate) fn core_slice(core: &DenseTensor, i: usize) -> DMatrix<f64> {
    let d = core.dims();
    let (ra, ni, rb) = (d[0], d[1], d[2]);
    let data = core.data();
    DMatrix::from_fn(ra, rb, |a, b| data[a + ra * (i + ni * b)])
}

pub(crate) fn transfer_matrix(core: &DenseTensor) -> DMatrix<f64> {
    let d = core.dims();
    let (ra, ni, rb) = (d[0], d[1], d[2]);
    let data = core.data();
    let mut out = DMatrix::zeros(ra * ra, rb * rb);
    for bp in 0..rb {
        for b in 0..rb {
            let col = b + rb * bp;
            for ap in 0..ra {
                for a in 0..ra {
                    let mut acc = 0.0;
                    for i in 0..ni {
                        acc += data[a + ra * (i + ni * b)] * data[ap + ra * (i + ni * bp)];
                    }
                    out[(a + ra * ap, col)] = acc;
                }
            }
        }
    }
    out
}

/// Right-multiplies the trailing bond of a core: `core • q`.
pub(crate) fn core_times_matrix(core: &DenseTensor, q: &DMatrix<f64>) -> DenseTensor {
    let d = core.dims().to_vec();
    let m = DMatrix::from_column_slice(d[0] * d[1], d[2], core.data());
    let out = m * q;
    DenseTensor::new(vec![d[0], d[1], q.ncols()], out.as_slice().to_vec()).expect("dims")
}

/// Left-multiplies the leading bond of a core: `q • core`.
pub(crate) fn matrix_times_core(q: &DMatrix<f64>, core: &DenseTensor) -> DenseTensor {
    let d = core.dims().to_vec();
    let m = DMatrix::from_column_slice(d[0], d[1] * d[2], core.data());
    let out = q * m;
    DenseTensor::new(vec![q.nrows(), d[1], d[2]], out.as_slice().to_vec()).expect("dims")
}

/// Block term decomposition whose Tucker terms share one core:
/// `Y = Σ_t B ×_1 A_t ×_3 C_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct BtdSharedModel {
    /// `T` matrices of size `I_1 x R_2`.
    pub a_factors: Vec<DMatrix<f64>>,
    /// `R_2 x I_2 x R_3`.
    pub shared_core: DenseTensor,
    /// `T` matrices of size `I_3 x R_3`.
    pub c_factors: Vec<DMatrix<f64>>,
}

impl BtdSharedModel {
    pub fn new(
        a_factors: Vec<DMatrix<f64>>,
        shared_core: DenseTensor,
        c_factors: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if a_factors.is_empty() || a_factors.len() != c_factors.len() {
            return invalid("need the same positive number of A and C factors");
        }
        if shared_core.order() != 3 {
            return invalid("shared core must have order 3");
        }
        let (r2, r3) = (shared_core.dims()[0], shared_core.dims()[2]);
        let (i1, i3) = (a_factors[0].nrows(), c_factors[0].nrows());
        if a_factors.iter().any(|a| a.shape() != (i1, r2)) {
            return invalid(format!("every A factor must be {i1} x {r2}"));
        }
        if c_factors.iter().any(|c| c.shape() != (i3, r3)) {
            return invalid(format!("every C factor must be {i3} x {r3}"));
        }
        Ok(Self {
            a_factors,
            shared_core,
            c_factors,
        })
    }

    pub fn terms(&self) -> usize {
        self.a_factors.len()
    }

    /// Direct sum of the Tucker terms.
    pub fn reconstruct(&self) -> DenseTensor {
        let d = self.shared_core.dims();
        let (r2, i2, r3) = (d[0], d[1], d[2]);
        let i1 = self.a_factors[0].nrows();
        let i3 = self.c_factors[0].nrows();
        let mut out = DenseTensor::zeros(vec![i1, i2, i3]).expect("dims");
        // B as an r2 x (i2 r3) matrix
        let bmat = DMatrix::from_column_slice(r2, i2 * r3, self.shared_core.data());
        for (a, c) in self.a_factors.iter().zip(&self.c_factors) {
            // (i1 x r2)(r2 x i2 r3) -> i1 x i2 x r3
            let ab = a * &bmat;
            let ab = DMatrix::from_column_slice(i1 * i2, r3, ab.as_slice());
            let abc = ab * c.transpose();
            for (o, v) in out.data_mut().iter_mut().zip(abc.iter()) {
                *o += v;
            }
        }
        out
    }
}

/// Stacks the BTD factors into chain cores: `A(t,:,:) = A_t`, `C(:,:,t) = C_t`.
pub fn btd_to_tc(b: &BtdSharedModel) -> Result<TcModel> {
    let t = b.terms();
    let (i1, r2) = b.a_factors[0].shape();
    let (i3, r3) = b.c_factors[0].shape();
    let a = DenseTensor::from_fn(vec![t, i1, r2], |idx| b.a_factors[idx[0]][(idx[1], idx[2])])?;
    let c = DenseTensor::from_fn(vec![r3, i3, t], |idx| b.c_factors[idx[2]][(idx[1], idx[0])])?;
    TcModel::new(vec![a, b.shared_core.clone(), c])
}

/// Inverse of [`btd_to_tc`]; only defined for order-3 chains.
pub fn tc_to_btd(m: &TcModel) -> Result<BtdSharedModel> {
    if m.order() != 3 {
        return Err(Error::Unsupported(format!(
            "BTD conversion needs an order-3 chain, got order {}",
            m.order()
        )));
    }
    let a = m.core(0);
    let c = m.core(2);
    let (t, i1, r2) = (a.dims()[0], a.dims()[1], a.dims()[2]);
    let (r3, i3) = (c.dims()[0], c.dims()[1]);
    let a_factors = (0..t)
        .map(|s| DMatrix::from_fn(i1, r2, |i, r| a.get(&[s, i, r])))
        .collect();
    let c_factors = (0..t)
        .map(|s| DMatrix::from_fn(i3, r3, |k, r| c.get(&[r, k, s])))
        .collect();
    BtdSharedModel::new(a_factors, m.core(1).clone(), c_factors)
}
