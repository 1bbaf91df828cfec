//! Dense symmetric linear algebra used throughout the solver.
//!
//! Everything here works on small `DMatrix<f64>` values. Eigenvalues are
//! always returned in ascending order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric part `(m + mᵀ)/2`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Ascending eigenvalues and the matching orthonormal eigenvectors (columns).
pub fn sym_eig(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(sym(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eig(m).0[0]
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    sym_eig(m).0[n - 1]
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eig(m).0.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Spectral norm of an arbitrary matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Singular values in descending order. Empty matrices have none.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Lower Cholesky factor, or `None` when `m` is not numerically positive definite.
pub fn cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let c = nalgebra::Cholesky::new(sym(m))?;
    let l = c.l();
    if l.diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
        Some(l)
    } else {
        None
    }
}

/// `log det m` for positive definite `m`.
pub fn logdet_spd(m: &DMatrix<f64>) -> Option<f64> {
    let l = cholesky(m)?;
    Some(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn inv_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let c = nalgebra::Cholesky::new(sym(m))?;
    Some(sym(&c.inverse()))
}

/// Applies `f` to the spectrum of a symmetric matrix.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig(m);
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * f(vals[j]));
    sym(&(scaled * vecs.transpose()))
}

/// PSD square root. Eigenvalues below `floor` (relative to the largest) are
/// set to zero; the flag reports whether that happened.
pub fn psd_sqrt(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let (vals, _) = sym_eig(m);
    let top = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = floor * top.max(f64::MIN_POSITIVE);
    let floored = vals.iter().any(|&v| v < cut);
    let root = sym_fn(m, |v| if v < cut { 0.0 } else { v.sqrt() });
    (root, floored)
}

pub fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |v| v.max(0.0).sqrt())
}

pub fn spd_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |v| 1.0 / v.sqrt())
}

pub fn sym_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::exp)
}

/// Ratio of extreme eigenvalues; infinite when the smallest is not positive.
pub fn condition(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eig(m);
    let n = vals.len();
    if n == 0 {
        return 1.0;
    }
    if vals[0] <= 0.0 {
        return f64::INFINITY;
    }
    vals[n - 1] / vals[0]
}

/// Numerical rank: singular values above `rel_tol * reference` count.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64, reference: f64) -> usize {
    let cut = rel_tol * reference;
    singular_values(m).iter().filter(|&&s| s > cut).count()
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Orthonormal basis for the column span of `m` by modified Gram-Schmidt with
/// one reorthogonalization pass. Columns whose residual falls below
/// `rel_tol * reference` are dropped.
pub fn orthonormal_basis(m: &DMatrix<f64>, rel_tol: f64, reference: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let cut = rel_tol * reference;
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for col in m.column_iter() {
        let mut v: DVector<f64> = col.into_owned();
        for _ in 0..2 {
            for q in &kept {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > cut && norm > 0.0 {
            kept.push(v / norm);
        }
    }
    columns(n, &kept)
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns `basis` inside ℝⁿ.
pub fn orthogonal_complement(basis: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut kept: Vec<DVector<f64>> = basis.column_iter().map(|c| c.into_owned()).collect();
    let start = kept.len();
    for e in 0..n {
        if kept.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[e] = 1.0;
        for _ in 0..2 {
            for q in &kept {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            kept.push(v / norm);
        }
    }
    columns(n, &kept[start..])
}

fn columns(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Rounds to 12 significant digits, the precision used for all printed output.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}
