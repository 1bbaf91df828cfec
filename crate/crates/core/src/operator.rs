//! Symmetric and positive-definite operators, plus dense-matrix JSON helpers.

use nalgebra::DMatrix;
use serde_json::Value;

use crate::error::{FrblError, Result};
use crate::linalg;

/// Largest asymmetry accepted before symmetrizing, relative to `max(1, max|entry|)`.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricOperator(DMatrix<f64>);

impl SymmetricOperator {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let asym = linalg::asymmetry(&m);
        if asym > SYMMETRY_TOL * m.amax().max(1.0) {
            return Err(FrblError::Asymmetric { what: format!("{}x{} operator", m.nrows(), m.ncols()), asymmetry: asym });
        }
        Ok(Self(linalg::sym(&m)))
    }

    /// Symmetrizes without checking; for matrices produced by our own arithmetic.
    pub fn symmetrized(m: &DMatrix<f64>) -> Self {
        Self(linalg::sym(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdOperator(DMatrix<f64>);

impl SpdOperator {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let s = SymmetricOperator::new(m)?;
        Self::from_symmetric(s)
    }

    pub fn from_symmetric(s: SymmetricOperator) -> Result<Self> {
        if linalg::cholesky(s.matrix()).is_none() {
            return Err(FrblError::NotPositiveDefinite(format!("{}x{} operator", s.dim(), s.dim())));
        }
        Ok(Self(s.into_matrix()))
    }

    /// Symmetrizes, then verifies positive definiteness.
    pub fn symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        Self::from_symmetric(SymmetricOperator::symmetrized(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self(DMatrix::identity(n, n) * s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn logdet(&self) -> f64 {
        linalg::logdet_spd(&self.0).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn inverse(&self) -> SpdOperator {
        Self(linalg::inv_spd(&self.0).unwrap_or_else(|| linalg::sym_fn(&self.0, |v| 1.0 / v)))
    }

    pub fn scale(&self, s: f64) -> SpdOperator {
        Self(&self.0 * s)
    }
}

/// Block-diagonal operator on E_0 (or E^0) with one block per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    blocks: Vec<DMatrix<f64>>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        for b in &blocks {
            check_square(b)?;
        }
        Ok(Self { blocks })
    }

    /// `⊕ w_i·id_{n_i}`, e.g. Λ_c.
    pub fn scalar_blocks(weights: &[f64], dims: &[usize]) -> Self {
        Self { blocks: weights.iter().zip(dims).map(|(w, &n)| DMatrix::identity(n, n) * *w).collect() }
    }

    /// `⊕ w_i·M_i`, e.g. V_c from the V_i.
    pub fn weighted(weights: &[f64], ops: &[SpdOperator]) -> Self {
        Self { blocks: weights.iter().zip(ops).map(|(w, o)| o.matrix() * *w).collect() }
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.blocks)
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(FrblError::InvalidArgument(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FrblError::InvalidArgument("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Row-major nested arrays.
pub fn matrix_to_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| serde_json::json!(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Parses row-major nested arrays. `[[], []]` is a 2x0 matrix.
pub fn matrix_from_json(v: &Value, what: &str) -> Result<DMatrix<f64>> {
    let rows = v.as_array().ok_or_else(|| FrblError::Parse(format!("{what}: expected an array of rows")))?;
    let mut data: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for row in rows {
        let row = row.as_array().ok_or_else(|| FrblError::Parse(format!("{what}: expected an array of numbers")))?;
        let parsed: Option<Vec<f64>> = row.iter().map(|x| x.as_f64()).collect();
        data.push(parsed.ok_or_else(|| FrblError::Parse(format!("{what}: non-numeric entry")))?);
    }
    let ncols = data.first().map_or(0, |r| r.len());
    if data.iter().any(|r| r.len() != ncols) {
        return Err(FrblError::Parse(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(data.len(), ncols, |i, j| data[i][j]))
}

pub fn spd_list_to_json(ops: &[SpdOperator]) -> Value {
    Value::Array(ops.iter().map(|o| matrix_to_json(o.matrix())).collect())
}

pub fn spd_list_from_json(v: &Value, what: &str) -> Result<Vec<SpdOperator>> {
    let arr = v.as_array().ok_or_else(|| FrblError::Parse(format!("{what}: expected a list of matrices")))?;
    arr.iter()
        .enumerate()
        .map(|(i, m)| {
            let label = format!("{what}[{}]", i + 1);
            SpdOperator::new(matrix_from_json(m, &label)?).map_err(|e| FrblError::Parse(format!("{label}: {e}")))
        })
        .collect()
}
