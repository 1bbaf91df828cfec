//! Classical instances with closed-form constants.
//!
//! All matrices are generated from exact rational parameters at call time.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::datum::Datum;
use crate::error::{FrblError, Result};
use crate::geometric;
use crate::linalg;
use crate::operator::SpdOperator;
use crate::rational::{self, Rational};
use crate::solver::{dual_extremizers, Extremizers};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expected {
    Finite(f64),
    Infinite,
    Unknown,
}

impl Expected {
    pub fn to_json_value(&self) -> Value {
        match self {
            Expected::Finite(v) => json!({"finite": true, "value": v}),
            Expected::Infinite => json!({"finite": false}),
            Expected::Unknown => json!(null),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub name: String,
    pub datum: Datum,
    pub expected_dg: Expected,
    pub provenance: String,
    pub extremal_hint: Option<Extremizers>,
}

impl CatalogEntry {
    pub fn to_json_value(&self) -> Value {
        json!({
            "name": self.name,
            "expected_dg": self.expected_dg.to_json_value(),
            "provenance": self.provenance,
            "k": self.datum.k(),
            "m": self.datum.m(),
            "total_dim": self.datum.total_dim(),
            "has_hint": self.extremal_hint.is_some(),
        })
    }
}

fn one() -> Rational {
    Rational::from_integer(1)
}

/// Hölder conjugate s' = s/(s−1); `None` stands for s' = ∞.
fn conjugate(s: Rational) -> Option<Rational> {
    if s == one() {
        None
    } else {
        Some(s / (s - one()))
    }
}

/// log C_s² = (1/s)log|s| − (1/s')log|s'|, with C_1 = 1.
pub fn log_cs_squared(s: Rational) -> f64 {
    match conjugate(s) {
        None => 0.0,
        Some(sp) => {
            let (s, sp) = (rational::to_f64(&s), rational::to_f64(&sp));
            s.abs().ln() / s - sp.abs().ln() / sp
        }
    }
}

/// log K_s² = (1/s)log|s| + (1/s')log|s'|, with K_1 = 1.
pub fn log_ks_squared(s: Rational) -> f64 {
    match conjugate(s) {
        None => 0.0,
        Some(sp) => {
            let (s, sp) = (rational::to_f64(&s), rational::to_f64(&sp));
            s.abs().ln() / s + sp.abs().ln() / sp
        }
    }
}

fn check_young(p: Rational, q: Rational, r: Rational, n: usize) -> Result<()> {
    let zero = Rational::from_integer(0);
    for (name, s) in [("p", p), ("q", q), ("r", r)] {
        if s <= zero || s > one() {
            return Err(FrblError::Catalog(format!("{name} = {} must lie in (0, 1]", rational::format(&s))));
        }
    }
    if one() / p + one() / q != one() + one() / r {
        return Err(FrblError::Catalog("exponents must satisfy 1/p + 1/q = 1 + 1/r".into()));
    }
    if r == one() {
        return Err(FrblError::Catalog("r = 1 is the trivial case and is not built; take r < 1".into()));
    }
    if n == 0 {
        return Err(FrblError::Catalog("n must be positive".into()));
    }
    Ok(())
}

/// −n·log C with C = C_pC_q/C_r.
fn young_value(p: Rational, q: Rational, r: Rational, n: usize) -> f64 {
    let log_c = 0.5 * (log_cs_squared(p) + log_cs_squared(q) - log_cs_squared(r));
    -(n as f64) * log_c
}

fn young_datum(p: Rational, q: Rational, r: Rational, n: usize) -> Result<Datum> {
    let (pf, qf) = (rational::to_f64(&p), rational::to_f64(&q));
    let id = DMatrix::<f64>::identity(n, n);
    let top = DMatrix::from_fn(2 * n, n, |a, b| if a == b { 1.0 } else { 0.0 });
    let bottom = DMatrix::from_fn(2 * n, n, |a, b| if a == b + n { 1.0 } else { 0.0 });
    Datum::from_fn(&[n, n], &[n, 2 * n], &[one() / p, one() / q], &[one() / r - one(), one()], |i, j| {
        Some(match (i, j) {
            (0, 0) => &id * pf,
            (1, 0) => &id * qf,
            (0, 1) => &top * pf,
            _ => &bottom * qf,
        })
    })
    .map_err(FrblError::from)
}

/// Sharp reverse Young inequality for convolution on ℝⁿ.
pub fn reverse_young(p: Rational, q: Rational, r: Rational, n: usize) -> Result<CatalogEntry> {
    check_young(p, q, r, n)?;
    Ok(CatalogEntry {
        name: format!("reverse_young(p={}, q={}, r={}, n={n})", rational::format(&p), rational::format(&q), rational::format(&r)),
        datum: young_datum(p, q, r, n)?,
        expected_dg: Expected::Finite(young_value(p, q, r, n)),
        provenance: "sharp reverse Young inequality: D_g = -n log C, C = C_p C_q / C_r, \
                     C_s^2 = |s|^(1/s) / |s'|^(1/s'), C_1 = 1"
            .into(),
        extremal_hint: young_extremizers(p, q, r, n),
    })
}

/// Closed-form Gaussian extremizers of the reverse Young datum, for p, q < 1.
///
/// With c = (1/p, 1/q) and d_1 = 1/r − 1 the input precisions are
/// v_i = d_1/(c_i(c_i − 1)), U_1 = r, and Π = (diag(c_i v_i) − d_1 r 11ᵀ)⁻¹
/// with U_2 = Π⁻¹, all tensored with id_n.
fn young_extremizers(p: Rational, q: Rational, r: Rational, n: usize) -> Option<Extremizers> {
    if p == one() || q == one() {
        return None;
    }
    let c1 = rational::to_f64(&(one() / p));
    let c2 = rational::to_f64(&(one() / q));
    let d1 = rational::to_f64(&(one() / r - one()));
    let rf = rational::to_f64(&r);
    let a = d1 / (c1 * (c1 - 1.0));
    let b = d1 / (c2 * (c2 - 1.0));
    let m = DMatrix::from_row_slice(2, 2, &[c1 * a - d1 * rf, -d1 * rf, -d1 * rf, c2 * b - d1 * rf]);
    let pi2 = linalg::inv_spd(&m)?;
    let id = DMatrix::<f64>::identity(n, n);
    let pi = pi2.kronecker(&id);
    let datum = young_datum(p, q, r, n).ok()?;
    let v = vec![SpdOperator::scaled_identity(n, a), SpdOperator::scaled_identity(n, b)];
    let u = vec![SpdOperator::scaled_identity(n, rf), SpdOperator::new(m.kronecker(&id)).ok()?];
    Extremizers::new(&datum, v, u, pi).ok()
}

/// The dual (d, c, Bᵀ) of the reverse Young datum: the sharp forward Young
/// inequality in forward-reverse form. Same constant by duality.
pub fn dual_reverse_young(p: Rational, q: Rational, r: Rational, n: usize) -> Result<CatalogEntry> {
    let base = reverse_young(p, q, r, n)?;
    let log_k = 0.5 * (log_ks_squared(p) + log_ks_squared(q) + log_ks_squared(r));
    let hint = base.extremal_hint.as_ref().map(|e| dual_extremizers(&base.datum, e));
    Ok(CatalogEntry {
        name: format!(
            "dual_reverse_young(p={}, q={}, r={}, n={n})",
            rational::format(&p),
            rational::format(&q),
            rational::format(&r)
        ),
        datum: base.datum.dual(),
        expected_dg: base.expected_dg,
        provenance: format!(
            "dual of the reverse Young datum; same D_g. K = K_p K_q K_r with K_s^2 = |s|^(1/s) |s'|^(1/s'), \
             here log K = {log_k}"
        ),
        extremal_hint: hint,
    })
}

/// Rank-one geometric datum: unit vectors q_i with Σ c_i q_i q_iᵀ = id.
pub fn barthe_rank_one(q_vectors: &[DVector<f64>], c: &[Rational]) -> Result<CatalogEntry> {
    if q_vectors.is_empty() || q_vectors.len() != c.len() {
        return Err(FrblError::Catalog("one exponent per vector expected".into()));
    }
    let n = q_vectors[0].len();
    let mut frame = DMatrix::<f64>::zeros(n, n);
    for (i, (q, ci)) in q_vectors.iter().zip(c).enumerate() {
        if q.len() != n {
            return Err(FrblError::Catalog(format!("q_{} has length {}, expected {n}", i + 1, q.len())));
        }
        if (q.norm() - 1.0).abs() > geometric::FRAME_TOL {
            return Err(FrblError::Catalog(format!("q_{} is not a unit vector (norm {})", i + 1, q.norm())));
        }
        frame += q * q.transpose() * rational::to_f64(ci);
    }
    let dev = (frame - DMatrix::<f64>::identity(n, n)).amax();
    if dev > geometric::FRAME_TOL {
        return Err(FrblError::Catalog(format!("frame condition sum c_i q_i q_i^T = id fails by {dev:e}")));
    }
    let k = q_vectors.len();
    let datum = Datum::from_fn(&vec![1; k], &[n], c, &[one()], |i, _| Some(DMatrix::from_column_slice(n, 1, q_vectors[i].as_slice())))?;
    if !datum.scaling_holds() {
        return Err(FrblError::Catalog("exponents do not sum to the dimension".into()));
    }
    Ok(CatalogEntry {
        name: format!("barthe_rank_one(k={k}, n={n})"),
        datum,
        expected_dg: Expected::Finite(0.0),
        provenance: "geometric rank-one datum (Barthe frame condition): D_g = 0".into(),
        extremal_hint: None,
    })
}

/// Unit vectors at angles πi/k in the plane with c_i = 2/k.
pub fn barthe_planar(k: usize) -> Result<CatalogEntry> {
    if k < 2 {
        return Err(FrblError::Catalog("planar frames need k >= 2".into()));
    }
    let qs: Vec<DVector<f64>> = (0..k)
        .map(|i| {
            let t = std::f64::consts::PI * i as f64 / k as f64;
            DVector::from_vec(vec![t.cos(), t.sin()])
        })
        .collect();
    let c = vec![Rational::new(2, k as i64); k];
    let mut e = barthe_rank_one(&qs, &c)?;
    e.name = format!("barthe_planar(k={k})");
    Ok(e)
}

/// Appends E^{m+1} = E_0 with d_{m+1} = 1 and B_{m+1} = id.
pub fn barthe_wolff_augment(datum: &Datum) -> Datum {
    let n = datum.total_dim();
    let mut out_dims = datum.output_dims().to_vec();
    out_dims.push(n);
    let mut d = datum.d().to_vec();
    d.push(one());
    let m = datum.m();
    let in_offs = datum.input_offsets();
    Datum::from_fn(datum.input_dims(), &out_dims, datum.c(), &d, |i, j| {
        if j < m {
            datum.map(i, j).cloned()
        } else {
            let ni = datum.input_dims()[i];
            Some(DMatrix::from_fn(n, ni, |a, b| if a == in_offs[i] + b { 1.0 } else { 0.0 }))
        }
    })
    .expect("augmenting preserves validity")
}

/// Barthe-Wolff form on ℝⁿ with a single input of exponent 1 and no outputs,
/// augmented. The result is the identity datum.
pub fn barthe_wolff_identity(n: usize) -> Result<CatalogEntry> {
    if n == 0 {
        return Err(FrblError::Catalog("n must be positive".into()));
    }
    let base = Datum::new(vec![n], vec![], vec![one()], vec![], vec![vec![]])?;
    Ok(CatalogEntry {
        name: format!("barthe_wolff_identity(n={n})"),
        datum: barthe_wolff_augment(&base),
        expected_dg: Expected::Finite(0.0),
        provenance: "Barthe-Wolff augmentation of the exponent-1 single-input datum: identity datum, D_g = 0".into(),
        extremal_hint: None,
    })
}

/// Hölder-type datum: one input ℝⁿ, outputs ℝⁿ with identity maps and weights summing to 1.
pub fn holder(n: usize, d_weights: &[Rational]) -> Result<CatalogEntry> {
    if n == 0 || d_weights.is_empty() {
        return Err(FrblError::Catalog("need n >= 1 and at least one weight".into()));
    }
    if d_weights.iter().sum::<Rational>() != one() {
        return Err(FrblError::Catalog("Hölder weights must sum to 1".into()));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let v = vec![id.clone(); d_weights.len()];
    let datum = geometric::from_frames(&[id], &v, &[one()], d_weights)?;
    Ok(CatalogEntry {
        name: format!("holder(n={n}, m={})", d_weights.len()),
        datum,
        expected_dg: Expected::Finite(0.0),
        provenance: "Hölder inequality as a geometric datum: D_g = 0".into(),
        extremal_hint: None,
    })
}

/// Loomis-Whitney on ℝ³: coordinate-pair projections with d_j = 1/2.
pub fn loomis_whitney() -> Result<CatalogEntry> {
    let pairs = [[0usize, 1], [0, 2], [1, 2]];
    let v: Vec<DMatrix<f64>> =
        pairs.iter().map(|rows| DMatrix::from_fn(2, 3, |a, b| if rows[a] == b { 1.0 } else { 0.0 })).collect();
    let half = Rational::new(1, 2);
    let datum = geometric::from_frames(&[DMatrix::identity(3, 3)], &v, &[one()], &[half, half, half])?;
    Ok(CatalogEntry {
        name: "loomis_whitney(n=3)".into(),
        datum,
        expected_dg: Expected::Finite(0.0),
        provenance: "Loomis-Whitney inequality in three dimensions as a geometric datum: D_g = 0".into(),
        extremal_hint: None,
    })
}

pub fn identity(n: usize) -> Result<CatalogEntry> {
    if n == 0 {
        return Err(FrblError::Catalog("n must be positive".into()));
    }
    Ok(CatalogEntry {
        name: format!("identity(n={n})"),
        datum: Datum::identity(n),
        expected_dg: Expected::Finite(0.0),
        provenance: "single input and output with the identity map: D_g = 0".into(),
        extremal_hint: None,
    })
}

/// The standard corpus used by `catalog selftest` and the acceptance tests.
pub fn standard() -> Vec<CatalogEntry> {
    let q = |s: &str| rational::parse(s).expect("literal rational");
    // p = 1 is left out: its constant is only approached by degenerating
    // Gaussians, so the ascent converges sublinearly.
    let young = [("2/3", "2/3", "1/2", 1), ("2/3", "2/3", "1/2", 2), ("4/5", "2/3", "4/7", 1)];
    let mut out = vec![identity(1), identity(2)];
    for (p, qq, r, n) in young {
        out.push(reverse_young(q(p), q(qq), q(r), n));
        out.push(dual_reverse_young(q(p), q(qq), q(r), n));
    }
    out.push(barthe_rank_one(&[DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0])], &[q("1/2"), q("1/2")]));
    out.push(barthe_planar(3));
    out.push(barthe_planar(4));
    out.push(holder(2, &[q("1/2"), q("1/2")]));
    out.push(holder(1, &[q("1/3"), q("2/3")]));
    out.push(loomis_whitney());
    out.push(barthe_wolff_identity(2));
    out.into_iter().map(|e| e.expect("standard catalog parameters are valid")).collect()
}

/// Parameter description for one named constructor.
pub struct Family {
    pub name: &'static str,
    pub params: &'static str,
    pub summary: &'static str,
}

pub const FAMILIES: &[Family] = &[
    Family { name: "identity", params: "n=1", summary: "identity map on R^n" },
    Family { name: "reverse_young", params: "p=2/3 q=2/3 r=1/2 n=1", summary: "sharp reverse Young inequality" },
    Family { name: "dual_reverse_young", params: "p=2/3 q=2/3 r=1/2 n=1", summary: "dual of the reverse Young datum" },
    Family { name: "barthe_planar", params: "k=3", summary: "k unit vectors at angles pi*i/k in R^2, c_i = 2/k" },
    Family { name: "barthe_rank_one", params: "q=1;1 c=1/2,1/2", summary: "unit vectors q_i (';'-separated, ','-separated coordinates)" },
    Family { name: "barthe_wolff_identity", params: "n=1", summary: "augmented exponent-1 single-input datum" },
    Family { name: "holder", params: "n=2 d=1/2,1/2", summary: "Hölder inequality with weights d" },
    Family { name: "loomis_whitney", params: "", summary: "Loomis-Whitney inequality on R^3" },
];

/// Builds a named entry from `key=value` parameters, defaults filled from [`FAMILIES`].
pub fn build(name: &str, params: &[String]) -> Result<CatalogEntry> {
    let family = FAMILIES
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| FrblError::Catalog(format!("unknown catalog entry {name:?}")))?;
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for kv in family.params.split_whitespace() {
        let (k, v) = kv.split_once('=').expect("well-formed defaults");
        map.insert(k.into(), v.into());
    }
    for kv in params {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| FrblError::InvalidArgument(format!("expected key=value, got {kv:?}")))?;
        if !map.contains_key(k) {
            return Err(FrblError::InvalidArgument(format!("{name} has no parameter {k:?}")));
        }
        map.insert(k.into(), v.into());
    }
    let rat = |k: &str| rational::parse(&map[k]);
    let int = |k: &str| {
        map[k].parse::<usize>().map_err(|_| FrblError::InvalidArgument(format!("{k} must be a non-negative integer")))
    };
    let rat_list = |k: &str| map[k].split(',').map(rational::parse).collect::<Result<Vec<_>>>();
    match name {
        "identity" => identity(int("n")?),
        "reverse_young" => reverse_young(rat("p")?, rat("q")?, rat("r")?, int("n")?),
        "dual_reverse_young" => dual_reverse_young(rat("p")?, rat("q")?, rat("r")?, int("n")?),
        "barthe_planar" => barthe_planar(int("k")?),
        "barthe_rank_one" => {
            let vectors = map["q"]
                .split(';')
                .map(|v| {
                    v.split(',')
                        .map(|x| x.trim().parse::<f64>().map_err(|_| FrblError::InvalidArgument(format!("bad coordinate {x:?}"))))
                        .collect::<Result<Vec<f64>>>()
                        .map(DVector::from_vec)
                })
                .collect::<Result<Vec<_>>>()?;
            barthe_rank_one(&vectors, &rat_list("c")?)
        }
        "barthe_wolff_identity" => barthe_wolff_identity(int("n")?),
        "holder" => holder(int("n")?, &rat_list("d")?),
        "loomis_whitney" => loomis_whitney(),
        _ => unreachable!("family table and dispatch agree"),
    }
}
