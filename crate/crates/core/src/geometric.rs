//! Geometric data: recognition, construction from frames, geometrization of
//! extremizable data and Gaussian-kernel data.
//!
//! A datum is geometric when, with Q_j = B_jΛ_c, some Σ ∈ Π(id, …, id) has
//! Q_jΣQ_jᵀ = id for every j and Σ_j d_j Q_jᵀQ_j ≤ Λ_c. Such data have D_g = 0
//! with V = U = id and Π = Σ as extremizers.

use std::fmt;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::coupling::Coupling;
use crate::datum::{offsets, Datum};
use crate::error::{FrblError, Result};
use crate::linalg;
use crate::operator::{matrix_to_json, SpdOperator, SymmetricOperator};
use crate::rational::{self, Rational};
use crate::solver::{certify, Extremizers};

/// Frame identities are checked to this absolute tolerance.
pub const FRAME_TOL: f64 = 1e-10;
/// Eigenvalues of Q below this magnitude count as zero in the signature.
pub const SIGNATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricWitness {
    pub sigma: Coupling,
    /// max_j ‖Q_jΣQ_jᵀ − id‖.
    pub qq_gram: f64,
    /// λ_min(Λ_c − Σ_j d_j Q_jᵀQ_j).
    pub lambda_slack: f64,
}

impl GeometricWitness {
    pub fn to_json_value(&self) -> Value {
        json!({
            "Sigma": matrix_to_json(self.sigma.matrix()),
            "residuals": {"qq_gram": self.qq_gram, "lambda_slack": self.lambda_slack},
        })
    }
}

/// Why a datum was not recognized as geometric.
#[derive(Debug, Clone, PartialEq)]
pub enum Refusal {
    Scaling,
    SigmaShape(String),
    SigmaBlocks { index: usize, deviation: f64 },
    QqGram { index: usize, residual: f64 },
    LambdaSlack { min_eig: f64 },
}

impl fmt::Display for Refusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Refusal::Scaling => write!(f, "scaling condition fails"),
            Refusal::SigmaShape(s) => write!(f, "Sigma: {s}"),
            Refusal::SigmaBlocks { index, deviation } => {
                write!(f, "Sigma block {} deviates from the identity by {deviation:e}", index + 1)
            }
            Refusal::QqGram { index, residual } => {
                write!(f, "qq_gram: |Q_{0} Sigma Q_{0}^T - id| = {residual:e}", index + 1)
            }
            Refusal::LambdaSlack { min_eig } => write!(f, "lambda_slack: min eigenvalue {min_eig:e}"),
        }
    }
}

impl Refusal {
    pub fn to_json_value(&self) -> Value {
        let (kind, detail) = match self {
            Refusal::Scaling => ("scaling", json!(null)),
            Refusal::SigmaShape(s) => ("sigma_shape", json!(s)),
            Refusal::SigmaBlocks { index, deviation } => ("sigma_blocks", json!({"i": index + 1, "deviation": deviation})),
            Refusal::QqGram { index, residual } => ("qq_gram", json!({"j": index + 1, "residual": residual})),
            Refusal::LambdaSlack { min_eig } => ("lambda_slack", json!({"min_eig": min_eig})),
        };
        json!({"refusal": kind, "detail": detail, "message": self.to_string()})
    }
}

/// Checks the geometric conditions for the given Σ.
pub fn is_geometric(datum: &Datum, sigma: &DMatrix<f64>, tol: f64) -> std::result::Result<GeometricWitness, Refusal> {
    if !datum.scaling_holds() {
        return Err(Refusal::Scaling);
    }
    let n = datum.total_dim();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Refusal::SigmaShape(format!("{}x{}, expected {n}x{n}", sigma.nrows(), sigma.ncols())));
    }
    if linalg::asymmetry(sigma) > tol.max(1e-12) {
        return Err(Refusal::SigmaShape("not symmetric".into()));
    }
    let sigma = linalg::sym(sigma);
    if n > 0 && linalg::min_eig(&sigma) < -tol {
        return Err(Refusal::SigmaShape("not positive semidefinite".into()));
    }
    for (i, (&ni, off)) in datum.input_dims().iter().zip(datum.input_offsets()).enumerate() {
        let dev = (sigma.view((off, off), (ni, ni)) - DMatrix::<f64>::identity(ni, ni)).amax();
        if dev > tol {
            return Err(Refusal::SigmaBlocks { index: i, deviation: dev });
        }
    }
    let maps = datum.scaled_maps();
    let mut qq_gram: f64 = 0.0;
    for (j, q) in maps.iter().enumerate() {
        let r = linalg::sym_norm(&(q * &sigma * q.transpose() - DMatrix::<f64>::identity(q.nrows(), q.nrows())));
        if r > tol {
            return Err(Refusal::QqGram { index: j, residual: r });
        }
        qq_gram = qq_gram.max(r);
    }
    let mut slack = DMatrix::from_diagonal(&datum.lambda_c());
    for (q, d) in maps.iter().zip(datum.d_f64()) {
        slack -= q.transpose() * q * d;
    }
    let lambda_slack = if n == 0 { 0.0 } else { linalg::min_eig(&linalg::sym(&slack)) };
    if lambda_slack < -tol {
        return Err(Refusal::LambdaSlack { min_eig: lambda_slack });
    }
    Ok(GeometricWitness { sigma: Coupling::from_parts(&sigma, datum.input_dims()), qq_gram, lambda_slack })
}

/// The extremizers V = U = id, Π = Σ of a geometric datum.
pub fn geometric_extremizers(datum: &Datum, sigma: &DMatrix<f64>) -> Result<Extremizers> {
    let v = datum.input_dims().iter().map(|&n| SpdOperator::identity(n)).collect();
    let u = datum.output_dims().iter().map(|&n| SpdOperator::identity(n)).collect();
    Extremizers::new(datum, v, u, sigma.clone())
}

fn check_isometry(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let dev = (m * m.transpose() - DMatrix::<f64>::identity(m.nrows(), m.nrows())).amax();
    if dev > FRAME_TOL {
        return Err(FrblError::Geometric(format!("{what} is not a surjective isometry: |M M^T - id| = {dev:e}")));
    }
    Ok(())
}

/// Builds the datum with B_jΛ_c = V_j S⁻¹, S = (U_1; …; U_k), together with Σ = S Sᵀ.
pub fn from_frames_with_sigma(
    u_maps: &[DMatrix<f64>],
    v_maps: &[DMatrix<f64>],
    c: &[Rational],
    d: &[Rational],
) -> Result<(Datum, DMatrix<f64>)> {
    if u_maps.len() != c.len() || v_maps.len() != d.len() {
        return Err(FrblError::Geometric("one exponent per frame map expected".into()));
    }
    let n = u_maps.first().or(v_maps.first()).map_or(0, |m| m.ncols());
    for (i, u) in u_maps.iter().enumerate() {
        if u.ncols() != n {
            return Err(FrblError::Geometric(format!("U_{} has {} columns, expected {n}", i + 1, u.ncols())));
        }
        check_isometry(u, &format!("U_{}", i + 1))?;
    }
    for (j, v) in v_maps.iter().enumerate() {
        if v.ncols() != n {
            return Err(FrblError::Geometric(format!("V_{} has {} columns, expected {n}", j + 1, v.ncols())));
        }
        check_isometry(v, &format!("V_{}", j + 1))?;
    }
    let cf: Vec<f64> = c.iter().map(rational::to_f64).collect();
    let df: Vec<f64> = d.iter().map(rational::to_f64).collect();
    let mut lhs = DMatrix::zeros(n, n);
    for (u, ci) in u_maps.iter().zip(&cf) {
        lhs += u.transpose() * u * *ci;
    }
    let mut rhs = DMatrix::zeros(n, n);
    for (v, dj) in v_maps.iter().zip(&df) {
        rhs += v.transpose() * v * *dj;
    }
    let dev = (&lhs - &rhs).amax();
    if dev > FRAME_TOL {
        return Err(FrblError::Geometric(format!(
            "frame identity sum c_i U_i^T U_i = sum d_j V_j^T V_j fails by {dev:e}"
        )));
    }
    let dims: Vec<usize> = u_maps.iter().map(|u| u.nrows()).collect();
    if dims.iter().sum::<usize>() != n || (n > 0 && linalg::min_eig(&linalg::sym(&lhs)) <= FRAME_TOL) {
        return Err(FrblError::Geometric("the stacked map (U_1, ..., U_k) is not a bijection of E_0".into()));
    }
    let mut s = DMatrix::zeros(n, n);
    for (u, off) in u_maps.iter().zip(offsets(&dims)) {
        s.view_mut((off, 0), (u.nrows(), n)).copy_from(u);
    }
    let s_inv = s.clone().try_inverse().ok_or_else(|| FrblError::Geometric("stacked frame map is singular".into()))?;
    let offs = offsets(&dims);
    let qs: Vec<DMatrix<f64>> = v_maps.iter().map(|v| v * &s_inv).collect();
    let datum = Datum::from_fn(&dims, &v_maps.iter().map(|v| v.nrows()).collect::<Vec<_>>(), c, d, |i, j| {
        let block = qs[j].columns(offs[i], dims[i]) / cf[i];
        Some(block)
    })?;
    Ok((datum, linalg::sym(&(&s * s.transpose()))))
}

pub fn from_frames(u_maps: &[DMatrix<f64>], v_maps: &[DMatrix<f64>], c: &[Rational], d: &[Rational]) -> Result<Datum> {
    from_frames_with_sigma(u_maps, v_maps, c, d).map(|(datum, _)| datum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometrized {
    pub datum: Datum,
    /// Per-factor blocks C_i = V_i^{1/2} of C.
    pub c_in: Vec<DMatrix<f64>>,
    /// C_j = (A_j Π A_jᵀ)^{1/2}.
    pub c_out: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
    /// D_g(original) − D_g(geometric) = −Σ d_j log det C_j − Σ c_i log det C_i.
    pub shift: f64,
    pub witness: GeometricWitness,
}

impl Geometrized {
    pub fn to_json_value(&self) -> Value {
        json!({
            "datum": self.datum.to_json_value(),
            "C": self.c_in.iter().map(matrix_to_json).collect::<Vec<_>>(),
            "C_out": self.c_out.iter().map(matrix_to_json).collect::<Vec<_>>(),
            "Sigma": matrix_to_json(&self.sigma),
            "shift": self.shift,
            "residuals": {"qq_gram": self.witness.qq_gram, "lambda_slack": self.witness.lambda_slack},
        })
    }
}

/// Maps a datum with certified extremizers to the equivalent geometric datum
/// B'_j = C_j⁻¹B_jC⁻¹.
pub fn geometrize(datum: &Datum, ext: &Extremizers, tol: f64) -> Result<Geometrized> {
    let cert = certify(datum, ext, tol);
    if !cert.is_certified() {
        return Err(FrblError::Geometric(format!("extremizers are not certified at tol {tol:e} ({:?})", cert.verdict)));
    }
    let c_in: Vec<DMatrix<f64>> = ext.v.iter().map(|v| linalg::spd_sqrt(v.matrix())).collect();
    let c_in_inv: Vec<DMatrix<f64>> = ext.v.iter().map(|v| linalg::spd_inv_sqrt(v.matrix())).collect();
    let pi = ext.pi.matrix();
    let mut c_out = Vec::with_capacity(datum.m());
    let mut c_out_inv = Vec::with_capacity(datum.m());
    for (j, a) in datum.scaled_maps().iter().enumerate() {
        let cov = linalg::sym(&(a * pi * a.transpose()));
        let (root, floored) = linalg::psd_sqrt(&cov, 1e-12);
        if floored {
            return Err(FrblError::Geometric(format!("pushforward covariance {} is singular", j + 1)));
        }
        c_out_inv.push(linalg::spd_inv_sqrt(&cov));
        c_out.push(root);
    }
    let geo = Datum::from_fn(datum.input_dims(), datum.output_dims(), datum.c(), datum.d(), |i, j| {
        datum.map(i, j).map(|b| &c_out_inv[j] * b * &c_in_inv[i])
    })?;
    let v_half = linalg::block_diag(&c_in);
    let sigma = linalg::sym(&(&v_half * pi * &v_half));
    let witness = is_geometric(&geo, &sigma, 10.0 * tol)
        .map_err(|r| FrblError::Geometric(format!("geometrized datum fails the check: {r}")))?;
    let logdet = |m: &DMatrix<f64>| linalg::logdet_spd(m).unwrap_or(f64::NAN);
    let shift = -datum.d_f64().iter().zip(&c_out).map(|(d, cj)| d * logdet(cj)).sum::<f64>()
        - datum.c_f64().iter().zip(&c_in).map(|(c, ci)| c * logdet(ci)).sum::<f64>();
    Ok(Geometrized { datum: geo, c_in, c_out, sigma, shift, witness })
}

/// Augments the frames by the spectral parts of Q (positive eigenvalues become
/// one-dimensional input factors, negative ones output factors) and builds the
/// resulting geometric datum. Eigenvalue exponents are rationalized and must
/// keep the scaling condition exact.
pub fn gauss_kernel_datum(
    q: &SymmetricOperator,
    u_maps: &[DMatrix<f64>],
    v_maps: &[DMatrix<f64>],
    c: &[Rational],
    d: &[Rational],
) -> Result<Datum> {
    gauss_kernel_with_sigma(q, u_maps, v_maps, c, d).map(|(datum, _)| datum)
}

pub fn gauss_kernel_with_sigma(
    q: &SymmetricOperator,
    u_maps: &[DMatrix<f64>],
    v_maps: &[DMatrix<f64>],
    c: &[Rational],
    d: &[Rational],
) -> Result<(Datum, DMatrix<f64>)> {
    let h = q.dim();
    let (vals, vecs) = linalg::sym_eig(q.matrix());
    let mut u_aug = u_maps.to_vec();
    let mut v_aug = v_maps.to_vec();
    let mut c_aug = c.to_vec();
    let mut d_aug = d.to_vec();
    let mut s_plus = 0;
    for (l, &lam) in vals.iter().enumerate() {
        if lam.abs() <= SIGNATURE_TOL {
            continue;
        }
        let row = DMatrix::from_row_slice(1, h, vecs.column(l).as_slice());
        let expo = rational::rationalize(lam.abs(), 1_000_000, 1e-12).ok_or_else(|| {
            FrblError::Geometric(format!("eigenvalue {lam} of Q has no small rational representation"))
        })?;
        if lam > 0.0 {
            s_plus += 1;
            u_aug.push(row);
            c_aug.push(expo);
        } else {
            v_aug.push(row);
            d_aug.push(expo);
        }
    }
    let sum_e: usize = u_maps.iter().map(|u| u.nrows()).sum();
    if h < s_plus + sum_e {
        return Err(FrblError::Geometric(format!(
            "dimension condition fails: dim H = {h} < s+(Q) + sum dim E_i = {}",
            s_plus + sum_e
        )));
    }
    if u_maps.iter().chain(v_maps).any(|m| m.ncols() != h) {
        return Err(FrblError::Geometric(format!("frame maps must act on a space of dimension {h}")));
    }
    let (datum, sigma) = from_frames_with_sigma(&u_aug, &v_aug, &c_aug, &d_aug)?;
    if !datum.scaling_holds() {
        return Err(FrblError::Geometric("rationalized eigenvalue exponents break the scaling condition".into()));
    }
    Ok((datum, sigma))
}
