//! Dense tensors and the multilinear primitives used by the rest of the crate.
//!
//! Storage order is fixed globally: the **first index varies fastest**. An
//! entry `t[i_0, i_1, .., i_{N-1}]` lives at
//! `i_0 + I_0 * (i_1 + I_1 * (i_2 + ...))`. Every unfolding convention in the
//! crate follows from this rule; in particular a matrix unfolding is stored
//! column-major, so it maps directly onto [`nalgebra::DMatrix`].
//!
//! Mode indices in this API are zero-based.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Order-N array of `f64` with explicit mode sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return invalid(format!(
                "dims {:?} hold {} entries but {} values were given",
                dims,
                len,
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &dims);
        }
        Ok(Self { dims, data })
    }

    /// Wraps a column-major matrix as an order-2 tensor.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            dims: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut lin = 0;
        for k in (0..idx.len()).rev() {
            debug_assert!(idx[k] < self.dims[k]);
            lin = lin * self.dims[k] + idx[k];
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let lin = self.linear_index(idx);
        self.data[lin] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Reinterprets the storage with new mode sizes (same linear order).
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// Reorders modes: mode `k` of the result is mode `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.order();
        check_permutation(perm, n)?;
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let mut src_strides = vec![1usize; n];
        for k in 1..n {
            src_strides[k] = src_strides[k - 1] * self.dims[k - 1];
        }
        let out_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; n];
        let mut offset = 0usize;
        let d0 = out_dims[0];
        let s0 = strides[0];
        // Innermost mode is unrolled; the counter handles the rest.
        let outer: usize = out_dims[1..].iter().product();
        for _ in 0..outer {
            for j in 0..d0 {
                out.push(self.data[offset + j * s0]);
            }
            for k in 1..n {
                idx[k] += 1;
                offset += strides[k];
                if idx[k] < out_dims[k] {
                    break;
                }
                offset -= strides[k] * out_dims[k];
                idx[k] = 0;
            }
        }
        Ok(Self {
            dims: out_dims,
            data: out,
        })
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &DenseTensor) -> Result<Self> {
        if self.dims != other.dims {
            return invalid(format!(
                "dimension mismatch {:?} vs {:?}",
                self.dims, other.dims
            ));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return invalid("a tensor needs at least one mode");
    }
    if dims.contains(&0) {
        return invalid(format!("every mode size must be positive, got {dims:?}"));
    }
    Ok(())
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return invalid(format!("permutation {perm:?} does not cover {n} modes"));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return invalid(format!("{perm:?} is not a permutation of 0..{n}"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Advances a first-fastest multi-index counter.
pub(crate) fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in 0..idx.len() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Matrix flattening of a tensor along a mode partition.
///
/// Rows enumerate the multi-index over `row_modes` and columns the one over
/// `col_modes`, each with the first listed mode varying fastest. `data` is
/// column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Unfolding {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub row_modes: Vec<usize>,
    pub col_modes: Vec<usize>,
    /// Mode sizes of the source tensor.
    pub dims: Vec<usize>,
}

impl Unfolding {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r + self.rows * c]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }
}

pub fn unfold(t: &DenseTensor, row_modes: &[usize], col_modes: &[usize]) -> Result<Unfolding> {
    let n = t.order();
    let perm: Vec<usize> = row_modes.iter().chain(col_modes).copied().collect();
    if check_permutation(&perm, n).is_err() {
        return invalid(format!(
            "row modes {row_modes:?} and column modes {col_modes:?} must partition 0..{n}"
        ));
    }
    let rows: usize = row_modes.iter().map(|&m| t.dims[m]).product();
    let cols: usize = col_modes.iter().map(|&m| t.dims[m]).product();
    let permuted = t.permute(&perm)?;
    Ok(Unfolding {
        rows,
        cols,
        data: permuted.data,
        row_modes: row_modes.to_vec(),
        col_modes: col_modes.to_vec(),
        dims: t.dims.clone(),
    })
}

/// Inverse of [`unfold`].
pub fn refold(u: &Unfolding) -> Result<DenseTensor> {
    let perm: Vec<usize> = u.row_modes.iter().chain(&u.col_modes).copied().collect();
    check_permutation(&perm, u.dims.len())?;
    let pdims: Vec<usize> = perm.iter().map(|&p| u.dims[p]).collect();
    let permuted = DenseTensor::new(pdims, u.data.clone())?;
    let mut inverse = vec![0usize; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inverse[p] = k;
    }
    permuted.permute(&inverse)
}

/// Mode-`n` unfolding with the remaining modes in cyclic order `n+1, .., n-1`.
///
/// This is the layout that pairs with [`crate::TcModel::subchain_matrix`]:
/// `Y_(n) = A_n(2) Zᵀ`.
pub fn cyclic_unfolding(t: &DenseTensor, n: usize) -> Result<DMatrix<f64>> {
    let order = t.order();
    if n >= order {
        return invalid(format!("mode {n} out of range for order {order}"));
    }
    let cols: Vec<usize> = (1..order).map(|k| (n + k) % order).collect();
    Ok(unfold(t, &[n], &cols)?.to_matrix())
}

/// Contracts the last mode of `a` with the first mode of `b`.
///
/// For orders N and K the result has order N + K - 2; a scalar result is
/// returned with dims `[1]`.
pub fn train_contract(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let k = *a.dims.last().expect("non-empty dims");
    if k != b.dims[0] {
        return invalid(format!(
            "cannot contract last mode of {:?} with first mode of {:?}",
            a.dims, b.dims
        ));
    }
    let p = a.len() / k;
    let q = b.len() / k;
    let am = DMatrix::from_column_slice(p, k, &a.data);
    let bm = DMatrix::from_column_slice(k, q, &b.data);
    let c = am * bm;
    let mut dims: Vec<usize> = a.dims[..a.order() - 1].to_vec();
    dims.extend_from_slice(&b.dims[1..]);
    if dims.is_empty() {
        dims.push(1);
    }
    DenseTensor::new(dims, c.as_slice().to_vec())
}

/// Rotates mode order `(0, 1, .., N-1)` to `(1, .., N-1, 0)`.
pub fn cyclic_shift(t: &DenseTensor) -> DenseTensor {
    let n = t.order();
    if n < 2 {
        return t.clone();
    }
    let perm: Vec<usize> = (1..n).chain(std::iter::once(0)).collect();
    t.permute(&perm).expect("cyclic permutation is valid")
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.norm_sq().sqrt()
}

/// `‖y - yhat‖_F / ‖y‖_F`.
pub fn relative_error(y: &DenseTensor, yhat: &DenseTensor) -> Result<f64> {
    if y.dims != yhat.dims {
        return invalid(format!(
            "dimension mismatch {:?} vs {:?}",
            y.dims, yhat.dims
        ));
    }
    let ny = y.frobenius_norm();
    if ny == 0.0 {
        return invalid("relative error against a zero-norm reference");
    }
    let diff: f64 = y
        .data
        .iter()
        .zip(&yhat.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff.sqrt() / ny)
}

/// Binary indicator of observed entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskTensor {
    dims: Vec<usize>,
    data: Vec<bool>,
}

impl MaskTensor {
    pub fn new(dims: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return invalid(format!(
                "mask dims {:?} hold {} entries but {} flags were given",
                dims,
                len,
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    /// Builds a mask from `{0, 1}` values; anything else is rejected.
    pub fn from_values(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len());
        for &v in values {
            if v == 0.0 {
                data.push(false);
            } else if v == 1.0 {
                data.push(true);
            } else {
                return invalid(format!("mask value {v} is not binary"));
            }
        }
        Self::new(dims, data)
    }

    pub fn full(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![true; len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn observed_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    /// The mask as a `{0.0, 1.0}` tensor.
    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// `‖W.*(y - yhat)‖_F / ‖W.*y‖_F`.
pub fn masked_relative_error(y: &DenseTensor, yhat: &DenseTensor, mask: &MaskTensor) -> Result<f64> {
    if y.dims != yhat.dims || y.dims != mask.dims {
        return invalid("dimension mismatch between data, estimate and mask");
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), &w) in y.data.iter().zip(&yhat.data).zip(&mask.data) {
        if w {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    if den == 0.0 {
        return invalid("relative error against a zero-norm reference");
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t23() -> DenseTensor {
        // [[1,2,3],[4,5,6]] with the first index fastest
        DenseTensor::from_fn(vec![2, 3], |i| (3 * i[0] + i[1] + 1) as f64).unwrap()
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn unfold_identity_layout() {
        let t = t23();
        let u = unfold(&t, &[0], &[1]).unwrap();
        let m = u.to_matrix();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]));
    }

    #[test]
    fn unfold_transpose() {
        let t = t23();
        let m = unfold(&t, &[1], &[0]).unwrap().to_matrix();
        assert_eq!(m, DMatrix::from_row_slice(3, 2, &[1., 4., 2., 5., 3., 6.]));
    }

    #[test]
    fn unfold_rejects_bad_partition() {
        let t = t23();
        assert!(unfold(&t, &[0], &[0]).is_err());
        assert!(unfold(&t, &[0], &[]).is_err());
        assert!(unfold(&t, &[0, 1], &[2]).is_err());
    }

    #[test]
    fn unfold_entry_matches_mixed_radix() {
        let t = DenseTensor::from_fn(vec![3, 4, 5], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64)
            .unwrap();
        let u = unfold(&t, &[2, 0], &[1]).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    assert_eq!(u.get(k + 5 * i, j), t.get(&[i, j, k]));
                }
            }
        }
    }

    #[test]
    fn train_contract_identity() {
        let eye = DenseTensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap();
        let b = DenseTensor::from_fn(vec![2, 3, 4], |i| (i[0] + 2 * i[1] + 7 * i[2]) as f64).unwrap();
        assert_eq!(train_contract(&eye, &b).unwrap(), b);
    }

    #[test]
    fn train_contract_dot() {
        let a = DenseTensor::new(vec![1, 2], vec![1., 2.]).unwrap();
        let b = DenseTensor::new(vec![2, 1], vec![3., 4.]).unwrap();
        let c = train_contract(&a, &b).unwrap();
        assert_eq!(c.dims(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn train_contract_mismatch() {
        let a = DenseTensor::zeros(vec![2, 3]).unwrap();
        let b = DenseTensor::zeros(vec![2, 3]).unwrap();
        assert!(matches!(
            train_contract(&a, &b),
            Err(crate::Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn cyclic_shift_cases() {
        let t = DenseTensor::from_fn(vec![2, 3, 4], |i| (i[0] + 2 * i[1] + 6 * i[2]) as f64).unwrap();
        let s = cyclic_shift(&t);
        assert_eq!(s.dims(), &[3, 4, 2]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(s.get(&[j, k, i]), t.get(&[i, j, k]));
                }
            }
        }
        assert_eq!(cyclic_shift(&cyclic_shift(&s)), t);
        let v = DenseTensor::new(vec![3], vec![1., 2., 3.]).unwrap();
        assert_eq!(cyclic_shift(&v), v);
    }

    #[test]
    fn relative_error_cases() {
        let y = DenseTensor::new(vec![2], vec![3., 4.]).unwrap();
        let z = DenseTensor::zeros(vec![2]).unwrap();
        assert_eq!(relative_error(&y, &y).unwrap(), 0.0);
        assert_eq!(relative_error(&y, &z).unwrap(), 1.0);
        assert!(relative_error(&z, &y).is_err());
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(MaskTensor::from_values(vec![2], &[0.0, 0.5]).is_err());
        let m = MaskTensor::from_values(vec![2], &[0.0, 1.0]).unwrap();
        assert_eq!(m.observed_count(), 1);
        assert!(MaskTensor::new(vec![3], vec![true; 2]).is_err());
    }

    #[test]
    fn masked_error_ignores_missing() {
        let y = DenseTensor::new(vec![3], vec![1., 2., 3.]).unwrap();
        let yh = DenseTensor::new(vec![3], vec![1., 100., 3.]).unwrap();
        let m = MaskTensor::from_values(vec![3], &[1., 0., 1.]).unwrap();
        assert_eq!(masked_relative_error(&y, &yh, &m).unwrap(), 0.0);
    }
}
