//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Ties keep the order produced by the underlying routine (stable sort).
pub fn sym_eig_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn identity_vec(r: usize) -> DVector<f64> {
    let mut v = DVector::zeros(r * r);
    for a in 0..r {
        v[a + r * a] = 1.0;
    }
    v
}

/// Reshapes a length-`r*r` vector into an `r x r` matrix (column-major).
pub fn square_from_vec(v: &DVector<f64>, r: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(r, r, v.as_slice())
}

/// Solves `X G = F` for symmetric positive (semi)definite `G`.
///
/// Falls back to a ridge of `1e-10 * trace(G) / k` when the Cholesky
/// factorization fails; the second return value reports the fallback.
pub fn solve_right_spd(g: &DMatrix<f64>, f: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let k = g.nrows();
    if let Some(ch) = g.clone().cholesky() {
        let x = ch.solve(&f.transpose()).transpose();
        if x.iter().all(|v| v.is_finite()) {
            return (x, false);
        }
    }
    let trace = g.trace().abs().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-10 * trace / k as f64;
    loop {
        let mut gr = g.clone();
        for i in 0..k {
            gr[(i, i)] += ridge;
        }
        if let Some(ch) = gr.cholesky() {
            return (ch.solve(&f.transpose()).transpose(), true);
        }
        ridge *= 10.0;
    }
}

pub fn frob_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}
